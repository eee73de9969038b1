"""End-to-end run on synthetic ECG: compress instants with the temporal
autoencoder, tokenise, train the classifier and print per-class metrics.

Runs in well under a minute on one CPU because the classifier is narrowed.
"""
from taeclsa.dataset import generate_synthetic, split_counts
from taeclsa.pipeline import PipelineConfig, run_pipeline

# 50 records per class, 128 samples each
ds = generate_synthetic(50, 128, seed=0)
print("records:", ds.n, "per class:", {c.name: n for c, n in ds.class_counts().items()})

cfg = PipelineConfig(seed=0, tae_epochs=10, clsa_epochs=15,
                     clsa={"conv_filters": 64, "lstm_units": 32})


def show(stats):
    print(f"epoch {stats.epoch:2d}  train {stats.train_loss:.3f}/{stats.train_acc:.2f}"
          f"  val {stats.val_loss:.3f}/{stats.val_acc:.2f}")


res = run_pipeline(ds, cfg, on_epoch=show)
print("split sizes:", split_counts(res.data))
b1, b2 = res.tae_reports
print(f"autoencoder val MSE: batch 1 {b1.val_mse[-1]:.4f}, batch 2 {b2.val_mse[-1]:.4f}")
print()
print(res.report.table())
