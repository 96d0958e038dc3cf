"""Transferability scoring, selection, ensembling and classifier-head
adaptation for heterogeneous model zoos on an unlabeled target set."""

from .diversity import KernelConfig, div_scores, hsic
from .ensemble_adapt import (AdaptConfig, EnsembleModel, RecyclePair, adapt,
                             build_ensemble, ensemble_forward,
                             ensemble_weights, loss_cim, loss_im, loss_omr,
                             loss_pse, loss_sim, mine_recycle_pairs)
from .errors import ZooAdaptError
from .inference import (conditional_entropy, entropy, forward, mean_entropy,
                        predictive_semantics, structural_semantics)
from .kernels import active_backend
from .selection import SelectionResult, diversity_set, greedy_transferable_set, select
from .sute import (SuteComponents, SuteConfig, TransferabilityReport,
                   baseline_ane, baseline_nmi, indicator_gd, indicator_ic,
                   indicator_sc, phi, score_zoo, sute_of_ensemble, sute_score)
from .synthzoo import (ArchSpec, DomainTransform, ScenarioSpec, TrainConfig,
                       accuracy, build_zoo, generate_scenario, spearman)
from .tensorio import (ModelRecord, TargetBundle, load_zoo, read_tensor,
                       write_tensor)

__version__ = "0.1.0"
