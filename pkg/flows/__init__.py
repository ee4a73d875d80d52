"""
Copula flows for COMET Flows.

The flows app owns the neural pieces (MLPs, coupling layers, the copula
flow), the end-to-end model that composes them with the marginal transforms,
model files, the training/sampling commands and the run registry.

USAGE:
    from flows.services.comet import TrainConfig, fit

    model, log = fit(train, val, TrainConfig.from_settings(seed=7))
    samples = model.sample(1000, sigma=0.0, rng=np.random.default_rng(0))
"""
