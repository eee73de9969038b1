"""Parameter accounting: the classifier fed 6-wide latent instants versus
the same stack fed 12-wide raw instants.

No training is needed; counts follow from the configuration alone.
"""
from taeclsa.clsa import ClsaConfig, param_layout
from taeclsa.metrics import param_report

V = 5000  # vocabulary size; only the embedding table depends on it

for name, kw in [("full width", {}), ("desk width", {"conv_filters": 64, "lstm_units": 32})]:
    latent = param_layout(ClsaConfig(embed_dim=6, **kw), V)
    raw = param_layout(ClsaConfig(embed_dim=12, **kw), V)
    rep = param_report(latent, raw)
    print(f"== {name} ==")
    print(rep.table())
    # the embedding table scales with the vocabulary, so show the rest alone
    body = {k: v for k, v in latent.items() if k != "embedding"}
    body_raw = {k: v for k, v in raw.items() if k != "embedding"}
    print(f"without embedding table: {param_report(body, body_raw).reduction_pct:.2f}% smaller\n")
