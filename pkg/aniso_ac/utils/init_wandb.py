import wandb


def init_wandb(cfg):
    return wandb.init(
        project=cfg.wandb_project,
        name=cfg.name,
        mode=cfg.wandb_mode,
        config=cfg.model_dump(mode="json"),
        reinit=True,
    )
