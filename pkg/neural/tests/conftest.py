import pytest
import torch

from neural_subpath_solver import TrainConfig, train

torch.set_num_threads(4)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A briefly trained small model; contracts do not depend on quality."""
    path = tmp_path_factory.mktemp("ckpt") / "tiny.pt"
    cfg = TrainConfig(graph_size=10, instances_per_epoch=512, epochs=1, batch_size=64,
                      lr=1e-3, seed=11, embed_dim=32, n_heads=2, n_layers=1, ff_dim=64,
                      eval_instances=64)
    train(cfg, out_path=path)
    return path


@pytest.fixture(scope="session")
def trained_k10(tmp_path_factory):
    """A k=10 model trained long enough to show a real learning curve."""
    import time
    path = tmp_path_factory.mktemp("ckpt") / "k10.pt"
    cfg = TrainConfig(graph_size=10, instances_per_epoch=2048, epochs=4, batch_size=64,
                      lr=1e-3, seed=7, embed_dim=64, n_heads=4, n_layers=2, ff_dim=128,
                      eval_instances=256)
    started = time.perf_counter()
    _, history = train(cfg, out_path=path)
    return {"path": path, "config": cfg, "history": history,
            "seconds": time.perf_counter() - started}
