"""Published source / target mIoU pairs used as reference targets (not reproduced at desk scale).

Rows: (network, backbone, Cityscapes mIoU, DensePASS mIoU, reported gap).
"""

GAP_TABLE = [
    ("SwiftNet", "ResNet-18", 75.4, 25.7, -49.7),
    ("DeepLabV3+", "ResNet-18", 76.8, 25.6, -51.2),
    ("OCRNet", "HRNetV2p-W18s", 77.1, 25.9, -51.2),
    ("Fast-SCNN", "Fast-SCNN", 69.1, 24.6, -44.5),
    ("DeepLabV3+", "ResNet-50", 80.1, 29.0, -51.1),
    ("PSPNet", "ResNet-50", 78.6, 29.5, -49.1),
    ("DNL", "ResNet-50", 79.3, 28.7, -50.6),
    ("Semantic-FPN", "ResNet-50", 74.5, 29.9, -44.6),
    ("OCRNet", "HRNetV2p-W18", 78.6, 30.8, -47.8),
    ("DeepLabV3+", "ResNet-101", 80.9, 32.5, -48.4),
    ("PSPNet", "ResNet-101", 79.8, 30.4, -49.4),
    ("DANet", "ResNet-101", 80.4, 28.5, -51.9),
    ("DNL", "ResNet-101", 80.4, 32.1, -48.3),
    ("Semantic-FPN", "ResNet-101", 75.8, 28.8, -47.0),
    ("ResNeSt", "ResNeSt-101", 79.6, 28.8, -50.8),
    ("OCRNet", "HRNetV2p-W48", 80.7, 32.8, -47.9),
    ("SETR-MLA", "Transformer-Large", 77.2, 35.6, -41.6),
    ("SETR-PUP", "Transformer-Large", 79.3, 35.7, -43.6),
    ("ERFNet", "ERFNet", 72.1, 16.7, -55.4),
    ("ERFNet (adapted)", "ERFNet", 72.1, 34.1, -38.0),
    ("FANet", "ResNet-34", 71.3, 26.9, -44.4),
    ("FANet (adapted)", "ResNet-34", 71.3, 35.7, -35.6),
    ("DANet", "ResNet-50", 79.3, 28.5, -50.8),
    ("DANet (adapted)", "ResNet-50", 79.3, 42.0, -37.3),
]

# target-domain mIoU of the module ablation (DANet backbone), in percent
ABLATION_REFERENCE = {
    "source-only": 28.50,
    "S+A+R+F": 40.52,
    "S+A+R+F +SSL": 41.99,
}
