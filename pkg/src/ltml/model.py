"""The composed recognition model.

Glues the pieces together for one forward pass: prompt bank -> frozen text
encoder -> (optional) correlation GCN with residual merge -> fused class
features, while the tiny ViT embeds images; temperature-scaled cosine
similarities between the two give per-class logits.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import gcn as gcnmod
from . import vit as vitmod
from .correlation import build_conditional, build_graph
from .errors import ConfigError
from .losses import PredictionHead, cosine_logits, predict_probs
from .prompts import TextEncoder, encode_classes, init_prompts, load_embeddings_file, prior_embeddings


class RecognitionModel:
    """Everything trainable plus the frozen pieces, with a stable name map."""

    def __init__(self, bank, text_encoder, graph, gcn_stack, vit, head):
        self.bank = bank
        self.text_encoder = text_encoder
        self.graph = graph
        self.gcn_stack = gcn_stack
        self.vit = vit
        self.head = head

    # -- structure -------------------------------------------------------

    @property
    def num_classes(self):
        return self.bank.num_classes

    @property
    def patch_size(self):
        return self.vit.patch_size

    @property
    def input_size(self):
        return self.vit.image_size

    @property
    def use_gcn(self):
        return self.gcn_stack is not None

    def parameters(self):
        """Name -> Tensor for everything the optimizer may touch."""
        named = {"prompts.context": self.bank.context}
        if self.gcn_stack is not None:
            named.update(self.gcn_stack.parameters())
        named.update(self.vit.parameters())
        named.update(self.head.parameters())
        return named

    def trainable_mask(self, mode):
        """Trainability per parameter under full or peft fine-tuning.

        Peft freezes the ViT backbone (adapters and head projection stay
        trainable); prompts, GCN weights, and the temperature always train.
        """
        vit_mask = vitmod.apply_peft(self.vit, mode)
        mask = {"prompts.context": True}
        if self.gcn_stack is not None:
            mask.update({name: True for name in self.gcn_stack.parameters()})
        mask.update(vit_mask)
        mask["head.tau"] = True
        return mask

    def frozen_audit_values(self, mode):
        """Arrays that must stay bitwise constant during a run of ``mode``."""
        frozen = {"prompts.class_tokens": self.bank.class_tokens.data}
        frozen.update(self.text_encoder.frozen_values())
        frozen["graph.adjacency"] = self.graph.matrix
        mask = self.trainable_mask(mode)
        for name, tensor in self.parameters().items():
            if not mask[name]:
                frozen[name] = tensor.data
        return frozen

    def frozen_hash(self, mode):
        digest = hashlib.sha256()
        frozen = self.frozen_audit_values(mode)
        for name in sorted(frozen):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(frozen[name]).tobytes())
        return digest.hexdigest()

    # -- forward ----------------------------------------------------------

    def class_features(self):
        """Fused class features [C, d] (gradient-tracking)."""
        features = encode_classes(self.bank, self.text_encoder)
        if self.gcn_stack is not None:
            refined = gcnmod.gcn_forward(features, self.gcn_stack)
            features = gcnmod.residual_fuse(features, refined)
        return features

    def training_logits(self, images):
        """Pre-sigmoid cosine logits [B, C] with the full tape attached."""
        embeds = vitmod.encode_batch(self.vit, images)
        return cosine_logits(embeds, self.class_features(), self.head)

    def logits(self, images):
        """Detached logits as a numpy array (evaluation path)."""
        return self.training_logits(images).data.copy()

    def probabilities(self, images):
        """Detached per-class probabilities [B, C] (evaluation path)."""
        embeds = vitmod.encode_batch(self.vit, images)
        return predict_probs(embeds, self.class_features(), self.head).data.copy()


def build_model(cfg, num_classes, train_labels=None, graph_override=None):
    """Construct a model from a resolved run config.

    ``train_labels`` is required only for the conditional-probability
    correlation source; ``graph_override`` substitutes a prebuilt adjacency
    (used when restoring from a checkpoint).
    """
    seed = cfg["seed"]
    pcfg = cfg["prompts"]
    ecfg = cfg["encoder"]
    ccfg = cfg["correlation"]
    embed_dim = ecfg["embed_dim"]

    table = None
    if pcfg["encoder"] == "file":
        if not pcfg.get("embeddings_file"):
            raise ConfigError("prompts.encoder=file requires prompts.embeddings_file")
        classes, table = load_embeddings_file(pcfg["embeddings_file"])
        if len(classes) != num_classes:
            raise ConfigError(
                f"embeddings file has {len(classes)} classes, dataset has {num_classes}"
            )
        if table.shape[1] != embed_dim:
            raise ConfigError(
                f"embeddings file dim {table.shape[1]} != encoder embed_dim {embed_dim}"
            )
    text_encoder = TextEncoder(pcfg["encoder"], d_tok=pcfg["d_tok"], d=embed_dim,
                               seed=seed, table=table)
    bank = init_prompts(num_classes, pcfg["length"], pcfg["d_tok"],
                        mode=pcfg["init"], seed=seed)

    if graph_override is not None:
        graph = graph_override
    elif ccfg["source"] == "conditional_prob":
        if train_labels is None:
            raise ConfigError(
                "conditional-probability correlation needs training labels"
            )
        graph = build_conditional(train_labels, s=ccfg["s"],
                                  tau_prime=ccfg["tau_prime"],
                                  threshold=ccfg["cond_threshold"])
    else:
        priors = prior_embeddings(text_encoder, num_classes)
        graph = build_graph(priors.data, s=ccfg["s"], tau_prime=ccfg["tau_prime"])

    gcn_stack = None
    if cfg["gcn"]["enabled"]:
        gcn_stack = gcnmod.GcnStack(embed_dim, graph, seed=seed,
                                    negative_slope=cfg["gcn"]["negative_slope"])

    vit = vitmod.TinyViT(
        image_size=ecfg["image_size"],
        patch_size=ecfg["patch_size"],
        depth=ecfg["depth"],
        width=ecfg["width"],
        heads=ecfg["heads"],
        embed_dim=embed_dim,
        adapter_dim=ecfg["adapter_dim"],
        adapters_enabled=ecfg["adapters_enabled"],
        seed=seed,
    )
    head = PredictionHead(init=cfg["head"]["tau_init"])
    return RecognitionModel(bank, text_encoder, graph, gcn_stack, vit, head)
