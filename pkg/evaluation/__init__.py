"""
Evaluation for COMET Flows: held-out NLL, tail-dependence coefficients on
data and model samples, PIT uniformity and report files.
"""
