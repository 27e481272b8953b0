import logging
import threading
import time
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from base.runner import ExperimentRunner


class CheckThread(threading.Thread):
    daemon = True

    def __init__(self, check: str, exit_flag: threading.Event,
                 runner_object: 'ExperimentRunner',
                 runner_method: str,
                 slots: threading.Semaphore | None = None):
        self.exit_flag = exit_flag
        self.check = check
        self.runner_object = runner_object
        self.runner_method = runner_method
        self.slots = slots
        self.failure: BaseException | None = None
        self.wall_time = 0.0
        threading.Thread.__init__(self, target=self.run, name=f"check-{check}")
        self.logger = logging.getLogger("schroedinger-lab")

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def run(self) -> None:
        if self.slots is not None:
            self.slots.acquire()
        try:
            if self.exit_flag.is_set():
                self.logger.info('check "%s" not started, run is stopping' % self.check)
                return
            self.logger.info('[start thread|check] %s -> %s' % (self.check, self.runner_method))
            start = time.monotonic()
            try:
                getattr(self.runner_object, self.runner_method)(self.check)
            except Exception as e:
                self.logger.exception('check "%s" failed: %s' % (self.check, e))
                self.failure = e
            finally:
                self.wall_time = time.monotonic() - start
            self.logger.info('[done thread|check] %s in %.2fs' % (self.check, self.wall_time))
        finally:
            if self.slots is not None:
                self.slots.release()
