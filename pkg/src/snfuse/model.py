"""The composed forecaster: pooling -> fusion -> reprogramming -> frozen stack -> head.

Only parameters the active configuration actually uses are registered, so
every trainable tensor is guaranteed a gradient from any generic batch.
The frozen set (vocabulary plus the surrogate blocks) is seeded once from
named substreams and never updated.
"""

from __future__ import annotations

import numpy as np

from . import backbone as bb
from . import fusion as fu
from . import pooling as pl
from .config import RunConfig
from .optim import ParamSet
from .rng import substream
from .tensor import Tensor, concat_rows, linear, mean_all, mul, sub


class ForecastModel:
    def __init__(self, cfg: RunConfig, dim: int, vocab: np.ndarray | None = None):
        cfg.validate()
        if dim < 1:
            raise ValueError(f"embedding dim must be >= 1, got {dim}")
        self.cfg = cfg
        self.dim = dim
        self.n_patches = bb.num_patches(cfg.t_window, cfg.patch_len, cfg.patch_stride)
        self.active_terms = self._active_terms()
        self.params = ParamSet()
        self.pos_table = pl.sinusoidal_table(cfg.max_news_per_day, dim)
        self.adjacency = fu.day_pair_adjacency(cfg.t_window)
        self._register(vocab)

    def _active_terms(self) -> list[str]:
        cfg = self.cfg
        if cfg.pooling == "none":
            return ["price"]
        active = ["news", "price"]
        if not cfg.no_p2n:
            active.append("p2n")
        if not cfg.no_n2p:
            active.append("n2p")
        if not cfg.no_gcn:
            active.append("gcn")
        return [t for t in fu.BLEND_TERMS if t in active]

    # -- initialization ------------------------------------------------

    def _gen(self, name: str) -> np.random.Generator:
        return substream(self.cfg.seed, f"init/{name}")

    def _add_matrix(self, name: str, fan_in: int, fan_out: int, frozen: bool = False) -> None:
        stream = f"frozen/{name}" if frozen else f"init/{name}"
        values = substream(self.cfg.seed, stream).normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        self.params.add(name, values, frozen=frozen)

    def _add_bias(self, name: str, size: int, frozen: bool = False) -> None:
        self.params.add(name, np.zeros(size), frozen=frozen)

    def _dense(self, name: str, fan_in: int, fan_out: int) -> None:
        self._add_matrix(f"{name}.w", fan_in, fan_out)
        self._add_bias(f"{name}.b", fan_out)

    def _register(self, vocab: np.ndarray | None) -> None:
        cfg, d = self.cfg, self.dim

        if cfg.pooling == "ap":
            self.params.add("pooling.ap.w", self._gen("pooling.ap.w").normal(0.0, 1.0 / np.sqrt(d), size=d))
        elif cfg.pooling == "cap":
            noise = self._gen("pooling.cap.w_c").normal(0.0, 0.02, size=(d, d))
            self.params.add("pooling.cap.w_c", np.eye(d) + noise)
        elif cfg.pooling == "sap":
            self.params.add("pooling.sap.w_s", self._gen("pooling.sap.w_s").normal(0.0, 1.0 / np.sqrt(d), size=d))
        elif cfg.pooling == "pasap":
            self.params.add("pooling.pasap.w_p", self._gen("pooling.pasap.w_p").normal(0.0, 1.0 / np.sqrt(d), size=d))

        self._dense("fusion.price_lift", 1, d)
        self._dense("fusion.price_dense", d, d)
        if cfg.pooling != "none":
            self._dense("fusion.news_dense", d, d)
        for direction in ("p2n", "n2p"):
            if direction in self.active_terms:
                for letter in ("q", "k", "v"):
                    self._add_matrix(f"fusion.{direction}.w{letter}", d, d)
        if "gcn" in self.active_terms:
            self._dense("fusion.gcn", d, d)
            for k in range(fu.CONV_TAPS):
                std = 1.0 / np.sqrt(d * fu.CONV_TAPS)
                self.params.add(f"fusion.conv.tap{k}", self._gen(f"fusion.conv.tap{k}").normal(0.0, std, size=(d, d)))
        self.params.add("fusion.blend.logits", np.zeros((1, len(fu.BLEND_TERMS))))

        v_rows, d_model = cfg.vocab_size, cfg.d_model
        self.params.add("reprog.vocab_proj.w",
                        self._gen("reprog.vocab_proj.w").normal(0.0, 1.0 / np.sqrt(v_rows), size=(v_rows, cfg.num_prototypes)))
        self._dense("reprog.patch_lift", cfg.patch_len * d, d_model)
        for letter in ("q", "k", "v"):
            self._add_matrix(f"reprog.attn.w{letter}", d_model, d_model)
        if cfg.snp:
            self._dense("reprog.prompt", d, d_model)
        self._dense("reprog.head", self.n_patches * d_model, cfg.horizon)

        if vocab is None:
            vocab = substream(cfg.seed, "frozen/backbone.vocab").standard_normal((v_rows, d_model))
        else:
            vocab = np.asarray(vocab, dtype=np.float64)
            if vocab.shape != (v_rows, d_model):
                raise ValueError(f"vocabulary shape {vocab.shape} != ({v_rows}, {d_model})")
        self.params.add("backbone.vocab", vocab, frozen=True)

        for layer in range(cfg.n_layers):
            p = f"backbone.block{layer}"
            self.params.add(f"{p}.ln1.g", np.ones(d_model), frozen=True)
            self.params.add(f"{p}.ln1.b", np.zeros(d_model), frozen=True)
            for letter in ("q", "k", "v", "o"):
                self._add_matrix(f"{p}.attn.w{letter}", d_model, d_model, frozen=True)
                if letter != "k":
                    self._add_bias(f"{p}.attn.b{letter}", d_model, frozen=True)
            self.params.add(f"{p}.ln2.g", np.ones(d_model), frozen=True)
            self.params.add(f"{p}.ln2.b", np.zeros(d_model), frozen=True)
            self._add_matrix(f"{p}.ffn.w1", d_model, cfg.ffn_dim, frozen=True)
            self._add_bias(f"{p}.ffn.b1", cfg.ffn_dim, frozen=True)
            self._add_matrix(f"{p}.ffn.w2", cfg.ffn_dim, d_model, frozen=True)
            self._add_bias(f"{p}.ffn.b2", d_model, frozen=True)
        self.params.add("backbone.final_ln.g", np.ones(d_model), frozen=True)
        self.params.add("backbone.final_ln.b", np.zeros(d_model), frozen=True)

    # -- forward -------------------------------------------------------

    def fuse_sample(self, prices: np.ndarray, news: list[np.ndarray], name_emb: np.ndarray) -> Tensor:
        """Stock-aware features (T, d) for one window."""
        cfg, p = self.cfg, self.params
        if prices.shape[0] != cfg.t_window:
            raise ValueError(f"price window length {prices.shape[0]} != T={cfg.t_window}")
        price_raw = linear(Tensor(prices.reshape(-1, 1)), p["fusion.price_lift.w"], p["fusion.price_lift.b"])
        price_seq = linear(price_raw, p["fusion.price_dense.w"], p["fusion.price_dense.b"])

        terms: dict[str, Tensor] = {"price": price_seq}
        if cfg.pooling != "none":
            if len(news) != cfg.t_window:
                raise ValueError(f"need {cfg.t_window} news slots, got {len(news)}")
            pooled = [pl.pool_day(cfg.pooling, day, name_emb, p, self.pos_table).pooled for day in news]
            news_raw = concat_rows(pooled)
            news_seq = linear(news_raw, p["fusion.news_dense.w"], p["fusion.news_dense.b"])
            terms["news"] = news_seq
            if "p2n" in self.active_terms or "n2p" in self.active_terms:
                s_p2n, s_n2p = fu.fuse_directions(news_seq, price_seq, p)
                if "p2n" in self.active_terms:
                    terms["p2n"] = s_p2n
                if "n2p" in self.active_terms:
                    terms["n2p"] = s_n2p
            if "gcn" in self.active_terms:
                terms["gcn"] = fu.gcn_fuse(news_seq, price_seq, p, self.adjacency)
        fused, _ = fu.blend(terms, p["fusion.blend.logits"], self.active_terms)
        return fused

    def predict_sample(self, prices: np.ndarray, news: list[np.ndarray], name_emb: np.ndarray) -> Tensor:
        """(1, H) prediction of normalized closes."""
        cfg, p = self.cfg, self.params
        fused = self.fuse_sample(prices, news, name_emb)
        patches = bb.patchify(fused, cfg.patch_len, cfg.patch_stride)
        prototypes = bb.make_prototypes(p["backbone.vocab"], p["reprog.vocab_proj.w"])
        tokens = bb.reprogram(patches, prototypes, p, cfg.reprogram_heads)
        prompt = None
        if cfg.snp:
            prompt = linear(Tensor(name_emb.reshape(1, -1)), p["reprog.prompt.w"], p["reprog.prompt.b"])
        return bb.forward_backbone(prompt, tokens, p, cfg.n_layers, cfg.n_heads)

    def batch_predictions(self, batch) -> Tensor:
        """(B, H) stacked predictions for (prices, news, name_emb, target) tuples."""
        preds = [self.predict_sample(prices, news, emb) for prices, news, emb, _ in batch]
        return concat_rows(preds)

    def batch_loss(self, batch) -> Tensor:
        preds = self.batch_predictions(batch)
        targets = Tensor(np.stack([np.asarray(t, dtype=np.float64).reshape(-1) for *_, t in batch]))
        diff = sub(preds, targets)
        return mean_all(mul(diff, diff))
