import pandas as pd
import wandb


def save_report_to_wandb(frame: pd.DataFrame, key: str = "tr_report", step=None) -> None:
    """Log a report table to the active run, if any."""
    if not wandb.run or frame.empty:
        return

    table = wandb.Table(dataframe=frame)
    wandb.log({key: table}, step=step)
