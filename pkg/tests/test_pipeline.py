import numpy as np
import pytest

from cascast.cascade_io import (
    CascadeEdge,
    CascadeRecord,
    CorpusConfig,
    build_cascade_graph,
    generate_synthetic_corpus,
)
from cascast.global_embed import GlobalEmbedConfig
from cascast.local_embed import LocalEmbedConfig
from cascast.pipeline import (
    build_token_dataset,
    cascade_features,
    cross_partition_tokenizer,
    feature_table,
    fuse_cascade,
    global_table,
    local_rows,
    split_map,
)
from cascast.tokenizer import TokenizerConfig

TRAIN_TOK = TokenizerConfig(num_patches=8, max_length=16, observation_time=20.0)


def small_corpus(n=10, seed=3):
    cfg = CorpusConfig(
        num_cascades=n,
        graph_size=60,
        branching_mean=0.6,
        time_horizon=60.0,
        seed=seed,
        attach_m=2,
    )
    return generate_synthetic_corpus(cfg)


class TestCrossPartition:
    def test_shrinks_patch_count_with_fixed_duration(self):
        cfg = cross_partition_tokenizer(TRAIN_TOK, 15.0, max_context=32)
        assert cfg.num_patches == 6
        assert cfg.observation_time == 15.0
        assert cfg.max_length == TRAIN_TOK.max_length

    def test_same_window_is_identity(self):
        cfg = cross_partition_tokenizer(TRAIN_TOK, 20.0, max_context=32)
        assert cfg == TRAIN_TOK

    def test_rejects_fractional_patch_count(self):
        with pytest.raises(ValueError, match="whole number"):
            cross_partition_tokenizer(TRAIN_TOK, 7.0, max_context=32)

    def test_rejects_single_patch_window(self):
        with pytest.raises(ValueError, match="fewer than 2"):
            cross_partition_tokenizer(TRAIN_TOK, 2.5, max_context=32)

    def test_rejects_context_overflow(self):
        with pytest.raises(ValueError, match="max-context"):
            cross_partition_tokenizer(TRAIN_TOK, 40.0, max_context=8)


class TestFeatures:
    def test_root_only_cascade(self):
        rec = CascadeRecord("solo", root_user=4, publish_time=0.0, edges=[], final_popularity=1)
        feats = cascade_features(rec, TRAIN_TOK)
        assert feats.shape == (TRAIN_TOK.num_patches + 3,)
        np.testing.assert_array_equal(feats[: TRAIN_TOK.num_patches], 1.0)
        assert feats[-3] == 1.0  # log2(1 + 1)
        assert feats[-2] == 0.0
        assert feats[-1] == 0.0

    def test_crafted_chain(self):
        tok = TokenizerConfig(num_patches=4, max_length=8, observation_time=20.0)
        rec = CascadeRecord(
            "chain",
            root_user=0,
            publish_time=0.0,
            edges=[CascadeEdge(0, 1, 3.0), CascadeEdge(1, 2, 12.0)],
            final_popularity=3,
        )
        feats = cascade_features(rec, tok)
        np.testing.assert_array_equal(feats[:4], [2.0, 2.0, 3.0, 3.0])
        assert feats[4] == 2.0  # log2(3 + 1)
        assert feats[5] == pytest.approx(6.0)  # gaps 3 and 9
        assert feats[6] == 2.0

    def test_adopters_past_window_ignored(self):
        tok = TokenizerConfig(num_patches=2, max_length=8, observation_time=10.0)
        rec = CascadeRecord(
            "late",
            root_user=0,
            publish_time=0.0,
            edges=[CascadeEdge(0, 1, 2.0), CascadeEdge(0, 2, 50.0)],
            final_popularity=3,
        )
        feats = cascade_features(rec, tok)
        np.testing.assert_array_equal(feats[:2], [2.0, 2.0])

    def test_table_covers_corpus(self):
        corpus = small_corpus()
        table = feature_table(corpus.records, TRAIN_TOK)
        assert set(table) == {r.cascade_id for r in corpus.records}


class TestAssembly:
    def test_split_map_partitions_corpus(self):
        corpus = small_corpus()
        mapping = split_map(corpus, seed=1)
        assert set(mapping) == {r.cascade_id for r in corpus.records}
        assert set(mapping.values()) <= {"train", "val", "test"}
        again = split_map(corpus, seed=1)
        assert mapping == again

    def test_local_rows_align_with_user_order(self):
        corpus = small_corpus(n=4)
        cfg = LocalEmbedConfig()
        rows = local_rows(corpus.records, 20.0, cfg)
        rec = corpus.records[0]
        graph = build_cascade_graph(rec, 20.0)
        assert rows[rec.cascade_id].shape == (graph.n, cfg.dim)

    def test_fused_width_is_sum_of_parts(self):
        corpus = small_corpus(n=4)
        lcfg = LocalEmbedConfig()
        table = global_table(corpus, GlobalEmbedConfig(output_dim=4))
        rows = local_rows(corpus.records, 20.0, lcfg)
        rec = corpus.records[0]
        graph = build_cascade_graph(rec, 20.0)
        fused = fuse_cascade(graph, rows[rec.cascade_id], table)
        any_user = graph.users[0][0]
        assert fused[any_user].shape == (lcfg.dim + 4,)

    def test_dataset_shapes_and_cache_equivalence(self):
        corpus = small_corpus(n=6)
        splits = split_map(corpus, seed=2)
        lcfg = LocalEmbedConfig()
        table = global_table(corpus, GlobalEmbedConfig(output_dim=4))
        tok = TokenizerConfig(num_patches=4, max_length=6, observation_time=20.0)
        data = build_token_dataset(corpus.records, splits, table, lcfg, tok)
        width = tok.max_length * (lcfg.dim + 4)
        for cid, toks in data.tokens.items():
            assert toks.shape == (4, width)
            assert data.targets[cid] >= 1
        cache = local_rows(corpus.records, tok.observation_time, lcfg)
        cached = build_token_dataset(
            corpus.records, splits, table, lcfg, tok, rows_cache=cache
        )
        for cid in data.tokens:
            np.testing.assert_array_equal(data.tokens[cid], cached.tokens[cid])
