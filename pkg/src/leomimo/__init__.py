"""Statistical-CSI massive MIMO transmission for LEO satellite systems.

Modules
-------
channel
    UPA responses, Rician gains and Doppler/delay compensated channels.
txrx
    Closed-form ASLNR precoders and ASINR receivers with their iCSI baselines.
grouping
    Space-angle user grouping and the four-color reuse baseline.
rate
    Monte Carlo ergodic sum rates, upper and lower bounds, diagnostics.
harness
    Experiment configs, presets and CSV output behind the ``simulate`` CLI.
"""

__version__ = "0.1.0"
