"""LSTM surrogate model and real-time NMPC for cycle-to-cycle combustion control."""
