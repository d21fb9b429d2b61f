"""
hiersg: hierarchical relation classification for scene graphs, with
language-model commonsense validation of predicted relations.
"""

__version__ = "1.0.0"
