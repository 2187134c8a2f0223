"""facedyn: multi-scale facial-dynamics personality pipeline.

Short video segments pass through a C3D-Transformer backbone trained
with a disentangling loss, segment descriptors are summarized per video
into a two-channel spectral heatmap, and a multi-task head regresses the
five apparent-personality traits.
"""

__version__ = "0.1.0"

TRAIT_NAMES = ("Extraversion", "Agreeableness", "Conscientiousness", "Neuroticism", "Openness")
TRAIT_COLUMNS = ("Extra", "Agree", "Consc", "Neuro", "Open")
N_TRAITS = 5
