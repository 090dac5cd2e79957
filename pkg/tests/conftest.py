import numpy as np
import pytest


def pytest_configure(config):
    config.addinivalue_line("markers",
                            "acceptance: end-to-end acceptance criteria")


@pytest.fixture(scope="session")
def lissajous_trained():
    """Curve-trained double-circle system shared by the acceptance tests."""
    from springbrain import topology as topo
    from springbrain.tasks import lissajous as lj
    t = topo.double_circle(13)
    body, swg = lj.make_system(t, seed=1, amplitude_init=0.5)
    config = lj.LissajousConfig(updates=400)
    run = lj.train_single(t, body, swg, config, seed=1)
    return {"topology": t, "body": body, "swg": swg, "config": config,
            "run": run}


@pytest.fixture(scope="session")
def lissajous_transfer(lissajous_trained):
    from springbrain import pipelines as pl
    sys_cl, metrics = pl.transfer_lissajous(
        lissajous_trained["topology"], lissajous_trained["body"],
        lissajous_trained["swg"], seed=1)
    return {"system": sys_cl, "metrics": metrics, **lissajous_trained}


@pytest.fixture(scope="session")
def timeseries_trained():
    """Expanded-recurrence emulation system with capacity profiles before
    and after training."""
    from springbrain import analysis as an
    from springbrain import topology as topo
    from springbrain.tasks import series as ts
    t = topo.double_circle(17)
    body, brain = ts.make_system(t, "lil", seed=5)
    spec = ts.SeriesSpec("expanded-narma", order=2, tau=20)

    def profile():
        ev = ts.evaluate(t, body, brain, spec, length=1500, washout=100, seed=99)
        prof = an.ipc(ev["outputs"][100:], ev["inputs"][100:], max_degree=3,
                      max_delay=4, surrogates=100, seed=1)
        degs = prof.by_degree()
        return {"profile": prof, "nl23": degs.get(2, 0.0) + degs.get(3, 0.0),
                "mse": ev["mse"]}

    epoch0 = profile()
    config = ts.SeriesTaskConfig(spec=spec, length=200, washout=50, updates=60)
    run = ts.train(t, body, brain, config, seed=5)
    final = profile()
    return {"topology": t, "body": body, "brain": brain, "spec": spec,
            "run": run, "epoch0": epoch0, "final": final}


@pytest.fixture(scope="session")
def locomotion_trained():
    """Forward-trained caterpillar (seed chosen for a quiet untrained gait)."""
    from springbrain.tasks import locomotion as loco
    t, body, swg = loco.make_system(seed=1)
    _, untrained = loco.evaluate_speed(t, body, swg, duration=10.0)
    run = loco.train_forward(t, body, swg,
                             loco.LocomotionConfig(total_steps=20000), seed=1)
    _, trained = loco.evaluate_speed(t, body, swg, duration=10.0)
    return {"topology": t, "body": body, "swg": swg, "run": run,
            "untrained_speed": untrained, "trained_speed": trained}
