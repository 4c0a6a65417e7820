from .init_wandb import init_wandb
from .io import (
    read_csv,
    read_field,
    write_csv,
    write_field,
    write_json,
    write_vtk,
)
from .save_report_to_wandb import save_report_to_wandb
