"""graphem: decoupled hard/soft graph attention trained by alternating
label and feature propagation, for semi-supervised node classification."""

from .attention import (AttentionParams, AttentionState, LabelState,
                        connectivity_strength, dense_edge_matrix,
                        export_edge_weights, gumbel_sample_structure,
                        hard_attention_probs, kl_bernoulli, sampled_fusion,
                        soft_attention, stable_fusion, structure_prior,
                        weight_mass_ratio)
from .dataio import (DatasetManifest, EpochMetric, ResultRecord,
                     load_bundle, load_citation, read_results, save_bundle,
                     write_results)
from .graphs import (Graph, generate_sbm, inter_class_ratio,
                     laplacian_weights, oracle_graph, perturb_inter_class)
from .models import (GcnStack, PNetwork, QNetwork, build_p_network,
                     build_q_network, gcn_forward, p_forward, pr_nr_weights,
                     q_forward)
from .tensor import Adam, Tensor, rowwise_softmax_masked
from .training import (Hyperparams, RunResult, TrainerState, e_step, m_step,
                       pretrain_q, run, train_gcn)

__all__ = [
    "Adam", "AttentionParams", "AttentionState", "DatasetManifest",
    "EpochMetric", "GcnStack", "Graph", "Hyperparams", "LabelState",
    "PNetwork", "QNetwork", "ResultRecord", "RunResult", "Tensor",
    "TrainerState", "build_p_network", "build_q_network",
    "connectivity_strength", "dense_edge_matrix", "e_step",
    "export_edge_weights", "gcn_forward", "generate_sbm",
    "gumbel_sample_structure", "hard_attention_probs", "inter_class_ratio",
    "kl_bernoulli", "laplacian_weights", "load_bundle", "load_citation",
    "m_step", "oracle_graph", "p_forward", "perturb_inter_class",
    "pr_nr_weights", "pretrain_q", "q_forward", "read_results",
    "rowwise_softmax_masked", "run", "sampled_fusion", "save_bundle",
    "soft_attention", "stable_fusion", "structure_prior", "train_gcn",
    "weight_mass_ratio", "write_results",
]
