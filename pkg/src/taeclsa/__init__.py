"""ECG classification with a temporal autoencoder and a CNN-LSTM-self-attention classifier."""

__version__ = "0.1.0"
