"""Joint Bayesian variable selection for mixed continuous and discrete
responses under a Gaussian copula with a sparse latent inverse correlation.

The package splits into marginal families (`marginals`), graph and
hyper-inverse-Wishart machinery (`graphs`), data and prior containers
(`model`), the MCMC kernel (`sampler`), synthetic-data generation
(`simulate`), posterior summaries (`diagnostics`), and a batch CLI
(`cli`).
"""

from .errors import ConfigError, DataError, NumericError
from .marginals import (BernoulliProbit, BinomialLogit, Family, Gaussian,
                        NegBinomialLogit, OrdinalProbit, make_family)
from .model import (Dataset, Hyperparams, ModelState, build_dataset,
                    elicited_hyperparams, init_state, load_dataset)
from .sampler import (ChainConfig, Kernel, Trace, geweke_pvalues,
                      geweke_streams, load_trace, run_chain)
from .simulate import (Scenario, ResponseSpec, generate_replicate,
                       generate_scenario, get_scenario)
from .diagnostics import (SelectionReport, eppi, interval_score, mppi,
                          roc_auc, selection_report, summarize)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "NumericError",
    "Family", "Gaussian", "BernoulliProbit", "OrdinalProbit",
    "BinomialLogit", "NegBinomialLogit", "make_family",
    "Dataset", "Hyperparams", "ModelState", "build_dataset", "load_dataset",
    "elicited_hyperparams", "init_state",
    "ChainConfig", "Kernel", "Trace", "run_chain", "load_trace",
    "geweke_streams", "geweke_pvalues",
    "Scenario", "ResponseSpec", "get_scenario", "generate_replicate",
    "generate_scenario",
    "SelectionReport", "mppi", "eppi", "roc_auc", "interval_score",
    "selection_report", "summarize",
    "__version__",
]
