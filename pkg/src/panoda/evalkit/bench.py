import platform
import time

import torch


def hardware_string():
    proc = platform.processor() or platform.machine()
    dev = torch.cuda.get_device_name(0) if torch.cuda.is_available() else "cpu"
    return f"{proc} / {dev} / torch {torch.__version__} / threads {torch.get_num_threads()}"


@torch.no_grad()
def fps_benchmark(model, resolution=(400, 2048), n=100, batch=1, warmup=10, device="cpu"):
    """Mean frames per second of the forward pass on random input."""
    model.eval()
    h, w = resolution
    x = torch.rand(batch, 3, h, w, device=device)
    for _ in range(warmup):
        model(x)
    sync = torch.cuda.synchronize if str(device).startswith("cuda") else (lambda: None)
    sync()
    start = time.perf_counter()
    for _ in range(n):
        model(x)
    sync()
    elapsed = time.perf_counter() - start
    return {
        "fps": n * batch / elapsed,
        "n": n,
        "batch": batch,
        "warmup": warmup,
        "resolution": [h, w],
        "seconds": elapsed,
        "hardware": hardware_string(),
    }
