"""gazeseq: social-scene gaze prediction pipeline.

Scenario timelines -> synthetic participant gaze traces -> windowed sequence
datasets -> BiLSTM / Transformer classifiers -> streaming gaze controller.
"""

__version__ = "0.1.0"
