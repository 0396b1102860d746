"""Workbench for vehicular throughput prediction on synthetic radio traces.

Modules
-------
traces
    Synthetic trace generation, CSV ingestion and preprocessing.
resample
    Averaging downsample, forward-fill reconstruction and speed-binned error.
stationarity
    Augmented Dickey-Fuller test, accumulated p-values and autocorrelation.
drift
    Incremental Page-Hinkley detector and regime drift counting.
splits
    Train/test split strategies and the PCA split diagnostic.
features
    Feature groups, access scenarios, radio environment maps, horizon targets.
models
    The five throughput predictors behind a uniform fit/predict contract.
evaluation
    Metrics and experiment grids.
explain
    Shapley attributions and accumulated local effects.
"""
__version__ = "0.1.0"
