import pytest

from throttlesim.config import TRACE_PRESETS, load_config, parse_config
from throttlesim.sim import ConfigError


def test_example_configs_load():
    for path in ("configs/social10.yaml", "configs/chain3.yaml"):
        cfg = load_config(path)
        assert cfg.app.services and 0 < cfg.slo_percentile < 1


def test_defaults(chain_cfg):
    c = chain_cfg
    assert c.slo_ms == 200 and c.slo_percentile == 0.99
    assert c.controller.kind == "autothrottle"
    assert c.controller.captain.N == 10 and c.controller.captain.M == 50
    assert c.controller.tower.exploration_steps == 360
    tp = c.tower_params()
    assert tp.alloc_norm_max_cores == 12.0 and tp.latency_norm_max_ms == 1000.0
    assert c.sweep.thresholds == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def test_preset_trace_scaling():
    cfg = load_config("configs/social10.yaml")
    lo, avg, hi = TRACE_PRESETS["social-network"]["diurnal"]
    assert (cfg.trace.rps_min, cfg.trace.rps_avg, cfg.trace.rps_max) == pytest.approx((lo / 10, avg / 10, hi / 10))
    assert cfg.trace.kind == "diurnal"


@pytest.mark.parametrize("mutate,where", [
    (lambda d: d["app"]["call_graph"].update(req=[["front"], ["ghost"]]), "app.call_graph.req[1]"),
    (lambda d: d.update(slo={"percentile": 1.0}), "slo.percentile"),
    (lambda d: d["app"]["services"][1].update(demand={"req": -3}), "app.services[1].demand.req"),
    (lambda d: d.update(controller={"kind": "magic"}), "controller.kind"),
    (lambda d: d.update(controller={"tower": {"epsilon": 2}}), "controller.tower.epsilon"),
    (lambda d: d.update(controller={"targets": {"High": 0.5}}), "controller.targets.High"),
    (lambda d: d.update(controller={"kind": "fixed-targets"}), "controller.targets"),
    (lambda d: d.update(controller={"k8s": {"threshold": 1.5}}), "controller.k8s"),
    (lambda d: d.update(correlate={"services": ["nope"]}), "correlate.services"),
    (lambda d: d.update(sweep={"thresholds": [0.0]}), "sweep.thresholds"),
    (lambda d: d.update(bogus=1), "bogus"),
    (lambda d: d["app"].update(composition={"req": 0.5}), "app.composition"),
    (lambda d: d.update(trace={"rps_min": 50, "rps_avg": 10, "rps_max": 60}), "trace"),
    (lambda d: d.update(trace={"preset": "nope/diurnal"}), "trace.preset"),
    (lambda d: d["app"].pop("services"), "app.services"),
])
def test_errors_name_the_field(chain_data, mutate, where):
    mutate(chain_data)
    with pytest.raises(ConfigError) as e:
        parse_config(chain_data)
    assert where in str(e.value)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("app: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_replace_is_a_copy(chain_cfg):
    other = chain_cfg.replace(seed=99)
    assert other.seed == 99 and chain_cfg.seed == 5
