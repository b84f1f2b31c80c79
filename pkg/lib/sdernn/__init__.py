# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Imputation of irregularly sampled time series with propagated uncertainty.

The package couples a neural SDE, whose mean and covariance are propagated by linearization
between observations, with a GRU update whose covariance transform is computed from its
analytic Jacobians. See `sdernn.sde_rnn.impute` for the entry point.
"""
