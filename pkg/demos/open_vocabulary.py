"""Records from outside the training set can produce window tokens the
classifier has never seen. In open mode the vocabulary grows and each new
token gets an embedding row encoded by the autoencoder; closed mode refuses.
"""
from taeclsa.dataset import generate_synthetic
from taeclsa.errors import VocabularyError
from taeclsa.pipeline import PipelineConfig, build_classifier, train_tae

cfg = PipelineConfig(seed=0, tae_epochs=3, clsa={"conv_filters": 8, "lstm_units": 6})
train = generate_synthetic(4, 64, seed=1).records
fresh = generate_synthetic(2, 64, seed=99).records

tae, _ = train_tae(train, cfg)
model = build_classifier(train, cfg, tae)
before = model.params["embedding"].shape[0]
print("vocabulary after training records:", len(model.vocab), "rows:", before)

try:
    model.tokenize(fresh[0], open_vocab=False)
except VocabularyError as exc:
    print("closed vocabulary:", exc)

seq = model.tokenize(fresh[0], open_vocab=True)
after = model.params["embedding"].shape[0]
print(f"open vocabulary: {len(seq)} tokens, table grew {before} -> {after} rows")
