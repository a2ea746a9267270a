"""metaemb: combine pre-trained word embeddings into meta-embeddings.

Ingests word2vec/glove text sources, aligns them onto one vocabulary and
builds combined representations by concatenation, averaging, truncated
SVD, learned projections, autoencoding (coupled or per-source), target
mappings, or a semi-supervised siamese learner regularized by ensemble
reconstruction.  Includes Spearman word-similarity and additive-offset
analogy evaluation plus a CLI with reproducible, manifest-tracked runs.
"""

__version__ = "0.1.0"

from .aeme import AemeModel, encode, train_caeme, train_daeme
from .analogy import AnalogyDataset, cosadd_rank, eval_analogy, load_analogy_dataset
from .baselines import meta_1ton, meta_avg, meta_conc, meta_svd, truncated_svd
from .errors import (AlignmentError, ConfigError, DataError, EvaluationError,
                     FormatError, LossError, MetaEmbError, ParseError,
                     ProtocolError, TrainingError, UnknownTokenError)
from .kernels import active_backend
from .losses import RECON_KINDS, recon_loss
from .mtl import (DISTANCE_KINDS, SIM_KINDS, MtlModel, WordPairDataset,
                  build_mtl_model, load_word_pairs, mtl_loss, normalize_scores,
                  pair_distance, similarity_forward, train_mtl)
from .net import (Batch, FeedForwardNet, TrainConfig, finite_diff_check,
                  init_normal, load_checkpoint, save_checkpoint)
from .store import (EmbeddingEnsemble, EmbeddingSource, MetaEmbedding,
                    Vocabulary, align_vocabulary, concat_rows, export_meta,
                    load_meta, load_text_embeddings, normalize_l2,
                    write_word2vec_text)
from .tae import TaeModel, mte_meta, tae_meta, train_tae
from .wordsim import EvalReport, eval_wordsim, spearman

__all__ = [name for name in dir() if not name.startswith("_")]
