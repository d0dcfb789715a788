"""Tests for the background resource monitor."""

from src.health_monitor import HealthMonitor


def test_current_metrics_report_memory_and_output_size(tmp_path):
    (tmp_path / "model.cae").write_bytes(b"\0" * 2048)
    metrics = HealthMonitor(out_dir=tmp_path).get_current_metrics()

    assert metrics["memory_mb"] > 0
    assert metrics["thread_count"] >= 1
    assert metrics["output_mb"] > 0


def test_missing_output_directory_counts_as_empty(tmp_path):
    monitor = HealthMonitor(out_dir=tmp_path / "not-yet")
    assert monitor.get_current_metrics()["output_mb"] == 0.0
    assert not (tmp_path / "not-yet").exists()


def test_thresholds_set_status():
    assert HealthMonitor(memory_warning_mb=1e9, memory_critical_mb=2e9).check_health()["status"] == "HEALTHY"
    assert HealthMonitor(memory_warning_mb=0.0, memory_critical_mb=1e9).check_health()["status"] == "WARNING"
    assert HealthMonitor(memory_warning_mb=0.0, memory_critical_mb=0.0).check_health()["status"] == "CRITICAL"


def test_context_manager_records_a_final_sample():
    with HealthMonitor(check_interval=60.0) as monitor:
        pass

    summary = monitor.get_metrics_summary()
    assert summary["samples"] >= 1
    assert summary["memory_mb"]["max"] >= summary["memory_mb"]["min"] > 0


def test_summary_is_empty_before_any_sample():
    assert HealthMonitor().get_metrics_summary() == {}
