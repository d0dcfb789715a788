"""
Resource monitoring for long-running training, sampling and evaluation commands.

Monitors:
- Resident memory of the process
- Thread count (chain workers)
- CPU usage
- Size of the run's output directory
"""

import logging
import threading
import time
from pathlib import Path

import psutil

logger = logging.getLogger(__name__)


class HealthMonitor:
    """Sample process resource usage on a background thread."""

    def __init__(
        self,
        out_dir: str | Path | None = None,
        check_interval: float = 30.0,
        memory_warning_mb: float = 4000.0,
        memory_critical_mb: float = 8000.0,
        max_threads: int = 64,
    ):
        """
        Initialize health monitor.

        Args:
            out_dir: Output directory whose size is tracked (optional)
            check_interval: Seconds between checks
            memory_warning_mb: RSS above which a warning is logged
            memory_critical_mb: RSS above which an error is logged
            max_threads: Thread count above which a warning is logged
        """
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.check_interval = check_interval
        self.memory_warning_mb = memory_warning_mb
        self.memory_critical_mb = memory_critical_mb
        self.max_threads = max_threads
        self.process = psutil.Process()
        self._stop = threading.Event()
        self._monitor_thread: threading.Thread | None = None
        self.metrics_history: list[dict] = []
        self.max_history = 1000

    def _output_size_mb(self) -> float:
        if self.out_dir is None or not self.out_dir.exists():
            return 0.0
        total = sum(f.stat().st_size for f in self.out_dir.rglob("*") if f.is_file())
        return total / (1024 * 1024)

    def get_current_metrics(self) -> dict:
        """
        Get current resource metrics.

        Returns:
            Dictionary with current metrics (empty if psutil fails)
        """
        try:
            memory_mb = self.process.memory_info().rss / (1024 * 1024)
            return {
                "timestamp": time.time(),
                "memory_mb": round(memory_mb, 2),
                "thread_count": threading.active_count(),
                "cpu_percent": round(self.process.cpu_percent(interval=None), 2),
                "output_mb": round(self._output_size_mb(), 2),
            }
        except (psutil.Error, OSError) as e:
            logger.error(f"Error collecting metrics: {e}")
            return {}

    def check_health(self) -> dict:
        """
        Collect metrics, compare them with the thresholds and log the outcome.

        Returns:
            Dictionary with status ("HEALTHY", "WARNING" or "CRITICAL"), metrics,
            warnings and critical messages
        """
        metrics = self.get_current_metrics()
        warnings = []
        critical = []

        memory = metrics.get("memory_mb", 0)
        if memory > self.memory_critical_mb:
            critical.append(f"High memory usage: {memory:.1f}MB")
        elif memory > self.memory_warning_mb:
            warnings.append(f"Elevated memory usage: {memory:.1f}MB")

        if metrics.get("thread_count", 0) > self.max_threads:
            warnings.append(f"High thread count: {metrics['thread_count']}")

        if critical:
            status = "CRITICAL"
            logger.error(f"Health check CRITICAL: {', '.join(critical)}")
        elif warnings:
            status = "WARNING"
            logger.warning(f"Health check WARNING: {', '.join(warnings)}")
        else:
            status = "HEALTHY"
            logger.debug(
                f"Health check HEALTHY - Memory: {memory:.1f}MB, "
                f"Threads: {metrics.get('thread_count', 0)}"
            )

        return {"status": status, "metrics": metrics, "warnings": warnings, "critical": critical}

    def _record(self):
        health = self.check_health()
        if health["metrics"]:
            self.metrics_history.append(health["metrics"])
            if len(self.metrics_history) > self.max_history:
                self.metrics_history.pop(0)

    def _monitor_loop(self):
        logger.debug(f"Health monitoring started (check interval: {self.check_interval}s)")
        while not self._stop.is_set():
            self._record()
            self._stop.wait(self.check_interval)

    def start_monitoring(self):
        """Start background monitoring."""
        if self._monitor_thread is not None and self._monitor_thread.is_alive():
            logger.warning("Health monitoring already running")
            return
        self._stop.clear()
        self.process.cpu_percent(interval=None)  # prime the CPU counter
        self._monitor_thread = threading.Thread(
            target=self._monitor_loop, daemon=True, name="health-monitor"
        )
        self._monitor_thread.start()

    def stop_monitoring(self):
        """Stop monitoring and take one final sample."""
        if self._monitor_thread is None:
            return
        self._stop.set()
        self._monitor_thread.join(timeout=5)
        self._monitor_thread = None
        self._record()
        logger.debug("Health monitoring stopped")

    def __enter__(self):
        self.start_monitoring()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.stop_monitoring()

    def get_metrics_summary(self) -> dict:
        """
        Get summary statistics from metrics history.

        Returns:
            Dictionary with min/max/avg metrics
        """
        if not self.metrics_history:
            return {}

        summary = {}
        for key in ("memory_mb", "thread_count", "cpu_percent"):
            values = [m[key] for m in self.metrics_history]
            summary[key] = {
                "min": round(min(values), 2),
                "max": round(max(values), 2),
                "avg": round(sum(values) / len(values), 2),
            }
        summary["samples"] = len(self.metrics_history)
        return summary
