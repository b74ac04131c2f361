"""Few-shot classification on top of black-box text encoders.

The toolkit decodes exported encoder outputs in two coupled ways: hidden
states are matched against learned class prototypes through entropic optimal
transport, and raw verbalizer token scores are debiased against empty-input
predictions; the two score vectors are blended for the final call.
"""

from .decoder import (DecoderParams, TrainConfig, TrainingSet, class_scores_ot,
                      gradients, init_params, load_checkpoint, loss,
                      param_count, project, save_checkpoint, solve_plans, train)
from .errors import (ConfigError, ContractError, DataError, NotFoundError,
                     NumericError, ProtodecError, RemoteError)
from .gateway import (BatchItem, EncoderProvider, MockProvider, PackProvider,
                      RemoteProvider, batch_encode, encode,
                      fetch_sample_features, make_provider)
from .joint import JointConfig, Prediction, evaluate, fuse, seed_summary
from .numerics import (AdamState, adam_step, cosine_sim, make_rng, matmul,
                       softmax)
from .ot import (SinkhornConfig, TransportPlan, cosine_matrix, cost_from_sim,
                 ot_score, plan_variant, sinkhorn)
from .pipeline import (EvalRun, calibrated_score_matrix, evaluate_pack,
                       ot_score_matrix, subset_pack_prompts, train_from_pack,
                       training_set_from_pack)
from .store import (DatasetManifest, FeaturePack, ValidationReport, read_pack,
                    validate_pack, write_pack)
from .verbalizer import (EmbeddingTable, VerbalizerSpec, aggregate_to_classes,
                         average_prompts, build_spec, calibrate,
                         calibrated_class_scores, expand_label_words)

__version__ = "0.1.0"
