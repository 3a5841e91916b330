"""Zero-shot human-object interaction pipeline on embedding-space data.

The package builds verb prompts whose context shifts with the visual
diversity of each verb, refines them per region against a concept bank,
scores human-object pairs through a frozen backbone plus a small trained
adapter, and evaluates zero-shot splits with triplet-level mean AP.
"""

from .classifier import (AdamW, HoiModel, PipelineSettings, assign_targets,
                         build_model, candidate_pairs, cosine_lr,
                         estimate_statistics, focal_loss, image_logits,
                         image_loss_and_grads, load_checkpoint,
                         predict_dataset, save_checkpoint, train_model)
from .concepts import (ROUTES, ConceptBank, load_concepts, refine_prompts,
                       refine_prompts_backward, save_concepts)
from .config import (DEFAULTS, apply_overrides, build_settings, default_config,
                     load_config, write_manifest)
from .core import (Rng, cosine, grad_check, l2_norm, matmul, normalize_rows,
                   read_vdt1, relative_error, write_vdt1)
from .data import (Dataset, Split, load_dataset, load_gt_records,
                   load_predictions, load_split, save_gt_records,
                   save_predictions, save_split)
from .errors import (DataError, DegenerateInputWarning, DimensionError,
                     NumericError, ParameterError, ValidationError, VdrpError)
from .estimator import VdrpHoiClassifier
from .evaluate import (SPLIT_SCENARIOS, average_precision, build_split,
                       evaluate_predictions, permutation_baseline,
                       triplet_average_precision)
from .prompts import (SyntheticTextEncoder, build_prompts,
                      build_prompts_backward, embed_names, hash_embedding,
                      init_vdp_params, sample_noise, variance_stat_input)
from .regions import (adapter_forward, box_iou, frozen_projection,
                      init_region_params, load_detections, pair_geometry,
                      roi_align, roi_pool_vector, save_detections,
                      spatial_fuse, union_box)
from .simplex import (RETRIEVE_MODES, retrieve_weights, retrieve_weights_vjp,
                      softmax, sparsemax, tau_sparsemax, top_k_softmax)
from .stats import (diversity_score, group_average, interclass_divergence,
                    medoid_index, per_verb_moments, semantic_groups)
from .synthetic import compositional_taxonomy, generate_world, paper_scale_taxonomy

__version__ = "0.1.0"
