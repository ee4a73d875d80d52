"""
Marginal models for COMET Flows.

Each data column gets a semi-parametric transform to (0, 1): generalized
Pareto tails beyond the a- and b-quantiles and a Gaussian kernel density in
between. GP parameters are fit by maximum likelihood and fixed before the
copula flow is trained.

USAGE:
    from marginals.services.marginal import fit_marginal, marginal_transform

    m = fit_marginal(column, a=0.05, b=0.95, name="x1")
    u = marginal_transform(m, column)
"""
