"""
Centralized constants and defaults for the relation head, the commonsense
validation pipeline and the evaluation suite.
"""

# Super-categories in the order their probabilities appear in r_sc.
DEFAULT_SUPER_CATEGORIES = ('geometric', 'possessive', 'semantic')

# Parameter-name abbreviations for the default super-categories.
# Any other category name is used verbatim (W_<name>).
CATEGORY_ABBREVIATIONS = {
    'geometric': 'geo',
    'possessive': 'pos',
    'semantic': 'sem',
}

# Probabilities are clamped before taking logs.
PROB_CLAMP = 1e-12

# Tolerance used when checking that probability mass sums to one.
NORMALIZATION_TOL = 1e-6

# Loss defaults
DEFAULT_TEMPERATURE = 0.1
DEFAULT_LAMBDA_WEAK = 0.1
DEFAULT_LAMBDA_STRONG = 10.0

# Evaluation
IOU_THRESHOLD = 0.5
DEFAULT_K_LIST = (20, 50, 100)
COMPOSITE_WEIGHTS = (0.2, 0.4, 0.4)  # R@50, wmAP_rel, wmAP_phr

# Commonsense validation window
DEFAULT_SKIP_TOP = 10
DEFAULT_WINDOW = 20
DEFAULT_VOTES = 3

# k-means
DEFAULT_NUM_CLUSTERS = 3
KMEANS_MAX_ITER = 300

# Tensor file format
TENSOR_MAGIC = b'SGT1'
TENSOR_SUFFIX = '.sgt'
CHECKPOINT_MANIFEST = 'manifest.json'

# LLM client
DEFAULT_API_KEY_ENV = 'LLM_API_KEY'
DEFAULT_RESPONSE_PATH = 'choices.0.message.content'
