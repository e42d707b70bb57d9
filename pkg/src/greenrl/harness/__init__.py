"""Experiment harness: training curves, heat maps, exception tests, p-sweep, plots and CLI."""
from .experiments import (ExperimentGrid, HeatmapResult, TrainedRun, run_exception_tests, run_heatmap,
                          run_p_sweep, run_training_comparison, train_runs)
from .plotting import emit_plot, read_csv, write_csv

__all__ = ["ExperimentGrid", "HeatmapResult", "TrainedRun", "run_exception_tests", "run_heatmap",
           "run_p_sweep", "run_training_comparison", "train_runs", "emit_plot", "read_csv", "write_csv"]
