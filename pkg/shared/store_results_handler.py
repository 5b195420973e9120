import json
import os
from dataclasses import asdict, is_dataclass

import pandas as pd

from shared.environment_variables import ASMFS_VERSION
from shared.log_data import get_logger
from shared.log_handler import WarningRecorder

logger = get_logger("store")


class ArtifactWriter:
    """
    Writes command outputs. JSON artifacts carry the resolved config, version and
    warnings; text files open with a version and config header and every CSV gets
    a stamped JSON sidecar.
    """

    def __init__(self, output_dir: str, config_echo: dict, recorder: WarningRecorder = None):
        self.output_dir = output_dir
        self.config_echo = config_echo
        self.recorder = recorder
        self.written = []

    def _path(self, name: str) -> str:
        os.makedirs(self.output_dir, exist_ok=True)
        return os.path.join(self.output_dir, name)

    def stamp(self, payload: dict) -> dict:
        stamped = dict(payload)
        stamped["config"] = self.config_echo
        stamped["version"] = ASMFS_VERSION
        stamped["warnings"] = self.recorder.messages() if self.recorder else []
        return stamped

    def write_json(self, name: str, payload) -> str:
        if is_dataclass(payload):
            payload = asdict(payload)
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.stamp(payload), f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
        return self._record(path)

    def write_csv(self, name: str, frame: pd.DataFrame) -> str:
        """The CSV plus a stamped '<stem>.meta.json' sidecar naming it."""
        path = self._path(name)
        frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
        self.write_json(f"{os.path.splitext(name)[0]}.meta.json", {"artifact": name, "rows": int(len(frame))})
        return self._record(path)

    def header_lines(self) -> list:
        return [
            f"# asmfs {ASMFS_VERSION}",
            f"# config: {json.dumps(self.config_echo, sort_keys=True, separators=(',', ':'))}",
        ]

    def write_text(self, name: str, text: str) -> str:
        path = self._path(name)
        body = "\n".join(self.header_lines() + [text.rstrip("\n")])
        with open(path, "w", encoding="utf-8") as f:
            f.write(body + "\n")
        return self._record(path)

    def _record(self, path: str) -> str:
        self.written.append(path)
        logger.info(f"STORE | {self.output_dir} | Wrote {os.path.basename(path)}")
        return path


def register_artifact_writer(output_dir: str, config_echo: dict, recorder: WarningRecorder = None) -> ArtifactWriter:
    logger.debug(f"STORE | {output_dir} | Registered artifact writer")
    return ArtifactWriter(output_dir, config_echo, recorder)
