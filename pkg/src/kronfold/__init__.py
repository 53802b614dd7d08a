"""Low-rank reduction of matrix collections: SVD, GLRAM and multiple-pairs GLRAM."""

from .dataset import (FoldPlan, MatrixDataset, SyntheticSpec, center, kfold_split,
                      load_mds, load_pgm_dir, save_mds, synth_kron)
from .evaluation import EvalReport, cross_validate, knn_classify, rmsre, sweep
from .glram import FitConfig, GlramModel, glram_fit, glram_objective
from .kronecker import KronPairList, apply_pairs, kron, kron_rank_decompose, rearrange, unvec, vec
from .mpglram import MpglramConfig, MpglramModel, mpglram_fit, mpglram_objective
from .svd_baseline import SvdModel, svd_fit, svd_project, svd_reconstruct

__version__ = "0.1.0"
