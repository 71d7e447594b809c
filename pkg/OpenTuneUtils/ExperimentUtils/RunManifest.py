import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List


def git_blob_sha1(data: bytes) -> str:
    """与 `git hash-object` 相同的内容哈希"""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    """
    一次 CLI 调用的记录: 配置回显, 输入内容哈希, 产出文件与耗时

    content_hash 只依赖配置回显与输入文件的字节, 同一输入得到同一哈希
    """
    command: str
    config_echo: Dict[str, Dict[str, object]]
    inputs: List[str] = field(default_factory=list)
    artifacts: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def content_hash(self) -> str:
        payload = json.dumps(self.config_echo, sort_keys=True).encode()
        for path in self.inputs:
            with open(path, 'rb') as file:
                payload += file.read()
        return git_blob_sha1(payload)

    def add_artifact(self, name: str, path: str):
        self.artifacts[name] = str(path)

    def add_inputs(self, paths: Iterable[str]):
        self.inputs.extend(str(path) for path in paths)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config_echo,
            "inputs": self.inputs,
            "content_hash": self.content_hash,
            "artifacts": self.artifacts,
            "timings": self.timings,
        }

    def write(self, out_dir) -> str:
        filename = os.path.join(out_dir, f"manifest_{self.command}.json")
        with open(filename, 'w') as file:
            json.dump(self.to_dict(), file, indent=2, sort_keys=True)
        return filename
