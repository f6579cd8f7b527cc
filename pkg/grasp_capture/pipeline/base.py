from __future__ import annotations

import json
import logging
from copy import deepcopy
from pathlib import Path

import numpy as np
import torch
import wandb
import yaml
from matplotlib import pyplot as plt
from omegaconf import DictConfig, OmegaConf

from grasp_capture.eval.plots import save_fig
from grasp_capture.utils import wandb as wandb_utils


class Solver:
    """Base class for pipeline solvers"""

    def __init__(self, cfg: DictConfig):
        """Builds the solver from the hydra configuration"""
        # Configuration and setup
        self.cfg = deepcopy(cfg)
        OmegaConf.resolve(self.cfg)
        if cfg.get("num_threads"):
            torch.set_num_threads(cfg.num_threads)

        # Set output directory
        if self.cfg.get("out_dir") is None:
            self.out_dir = Path.cwd()
        else:
            self.out_dir = Path(self.cfg.out_dir)

        # Seed pytorch and numpy
        self.seed: int | None = self.cfg.get("seed")
        if self.seed is not None:
            torch.manual_seed(self.seed)
            np.random.seed(self.seed)

        # Logging
        self.plot_results: bool = self.cfg.get("plot_results", False)
        # See https://jsonlines.org/ for the JSON Lines text file format
        self.metrics_file = self.out_dir / "metrics.jsonl"

        # Weights & Biases
        if wandb.run is None:
            wandb.init(mode="disabled")

        self.initialized = False

    def setup(self):
        """Sets up the solver"""
        self.initialized = True

    def log(self, metrics: dict, plots: dict[str, plt.Figure] | None = None, step: int | None = None) -> dict:
        """Logs metrics and plots to disk and wandb."""
        plots = plots or {}

        # Save figures to disk
        for k, fig in plots.items():
            name = f"{k}.png" if step is None else f"{k}_step_{step}.png"
            save_fig(fig, self.out_dir / name)

        # Save metrics to disk
        self.metrics_file.parent.mkdir(parents=True, exist_ok=True)
        with self.metrics_file.open(mode="a") as f:
            f.write(json.dumps(metrics) + "\n")

        formatted = {k: wandb_utils.format_fig(fig) for k, fig in plots.items()}
        wandb.log({**metrics, **formatted}, step=step)
        for fig in plots.values():
            plt.close(fig)
        logging.info("Metrics:\n%s", yaml.dump(metrics))
        return metrics

    def run(self):
        raise NotImplementedError

    def __call__(self):
        """Runs the solver"""
        if not self.initialized:
            self.setup()
        logging.info("Running solver 🏃")
        return self.run()
