import os
import torch

from utils.errors import ValidationError


def select_device(device='cpu', threads=0, newline=True):
    # device = None or 'cpu' or 0 or '0' or 'cuda:0'
    s = f'[Info] Getting Device: '
    device = str(device).strip().lower().replace('cuda:', '').replace('none', '')  # to string, 'cuda:0' to '0'
    cpu = device in ('', 'cpu')
    if threads and threads > 0:
        torch.set_num_threads(threads)
    if cpu:
        s += f'CPU ({torch.get_num_threads()} threads)\n'
        arg = 'cpu'
    else:
        if not device.isdigit():
            raise ValidationError(f"Invalid device {device!r}, use 'cpu' or a CUDA device number")
        if not (torch.cuda.is_available() and torch.cuda.device_count() > int(device)):
            raise ValidationError(f"Invalid CUDA '--device {device}' requested, use '--device cpu' "
                                  f"or pass a valid CUDA device")
        p = torch.cuda.get_device_properties(int(device))
        s += f"CUDA:{device} ({p.name}, {p.total_memory / (1 << 20):.0f}MiB)\n"  # bytes to MB
        arg = f'cuda:{device}'

    if not newline:
        s = s.rstrip()
    return torch.device(arg), s
