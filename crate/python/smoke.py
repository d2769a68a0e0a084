"""Smoke test for the vflhlp_py extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
then run:
    python python/smoke.py
"""

import json
import math
import tempfile

import vflhlp_py as v

CONFIG = {
    "dataset": {"synthetic": {"preset": "avazu-like", "samples": 1200, "test_samples": 300, "seed": 3}},
    "partition": {"parties": 3, "aligned_counts": [40, 80], "seeds": [1, 2], "local_size": 350},
    "model": {"encoders": [{"embed_dim": 3, "widths": [8, 4]}]},
    "pretrain": {"ssl": {"epochs": 2, "batch_size": 64}, "sup": {"epochs": 2}},
    "downstream": {"training": {"epochs": 3, "optimizer": "sgd", "lr_server": 0.1, "lr_party": 0.05}},
}


def check_functions():
    assert v.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert v.auc([0.5, 0.5], [0, 1]) == 0.5
    loss, grad = v.info_nce([[1.0, 0.0], [0.0, 1.0]], 1.0)
    assert abs(loss - (math.log((math.e + 1) / 2) - 1)) < 1e-12
    assert len(grad) == 2 and abs(sum(grad[0])) < 1e-12
    s = v.cosine_similarity([[1.0, 0.0], [0.0, 2.0]], [[3.0, 0.0], [1.0, 1.0]])
    assert abs(s[0][0] - 1.0) < 1e-12 and abs(s[1][1] - math.sqrt(0.5)) < 1e-12
    try:
        v.auc([0.1, 0.2], [1, 1])
    except v.TrainingError:
        pass
    else:
        raise AssertionError("single-class auc must raise")


def check_pipeline():
    cfg = v.RunConfig.from_json(json.dumps(CONFIG))
    assert v.RunConfig.from_json(cfg.to_json()).config_hash == cfg.config_hash
    try:
        v.RunConfig.from_json('{"dataset": {}, "bogus": 1}')
    except v.ConfigError as e:
        assert isinstance(e, v.VflhlpError)
    else:
        raise AssertionError("unknown keys must be rejected")

    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        table = v.grid(cfg, a)
        assert not table.failures(), table.failures()
        assert table.labels[-1] == "delta(vflhlp-vanilla_vfl)"
        mean, std, n = table.stat("vflhlp", 40)
        assert n == 2 and 0.0 <= mean <= 1.0 and std >= 0.0
        print(table.render(), end="")

        again = v.grid(cfg, b)
        assert again.to_csv() == table.to_csv()

        for label, aligned, seed, recorded, score, same in v.evaluate(cfg, a):
            assert same, (label, aligned, seed, recorded, score)

        cells = v.train(cfg, b, seed=2, mode="vflhlp_p")
        assert [c.aligned_count for c in cells] == [40, 80]
        by_key = {(c.label, c.aligned_count, c.seed): c.test_auc for c in table.cells()}
        for c in cells:
            assert by_key[(c.label, c.aligned_count, c.seed)] == c.test_auc


if __name__ == "__main__":
    check_functions()
    check_pipeline()
    print("smoke ok")
