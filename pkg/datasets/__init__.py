"""
Tabular data for COMET Flows: the synthetic heavy-tail benchmark, CSV
ingestion and emission, standardization and seeded splits.

USAGE:
    from datasets.services.synthetic import standard_splits, DESK_SIZES
    from datasets.services.tabular import load_csv, save_csv

    train, val, test = standard_splits(seed=0, sizes=DESK_SIZES)
    save_csv(train, "train.csv")
"""
