from .bench import fps_benchmark
from .directional import directional_report, sector_confusions, sector_of_columns
from .metrics import (class_accuracy, confusion_from, confusion_update, format_table, gap_table,
                      iou_report, miou_gap, new_confusion)
from .visuals import colorize, decolorize, export_attention, export_visuals, heatmap_png
