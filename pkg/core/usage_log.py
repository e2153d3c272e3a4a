#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
使用日志模块

记录消费者节点上对已获取资源的每一次操作，导出为逐行 JSON 作为合规证据
"""

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Tuple

from core.errors import MalformedMetafile


class LogAction(str, Enum):
    RETRIEVED = "retrieved"
    ACCESS_GRANTED = "access_granted"
    ACCESS_DENIED = "access_denied"
    TEMPORAL_CHECK = "temporal_check"
    DELETED_EXPIRED = "deleted_expired"
    DELETED_EXHAUSTED = "deleted_exhausted"
    MONITORING_REQUEST = "monitoring_request"


@dataclass(frozen=True)
class UsageLogEntry:
    timestamp: int
    resource_id: int
    action: LogAction
    detail: str = ""

    def to_record(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "resourceId": self.resource_id,
            "action": self.action.value,
            "detail": self.detail,
        }

    @classmethod
    def from_record(cls, record: dict) -> "UsageLogEntry":
        return cls(
            timestamp=int(record["timestamp"]),
            resource_id=int(record["resourceId"]),
            action=LogAction(record["action"]),
            detail=str(record.get("detail", "")),
        )


def parse_detail(detail: str) -> dict:
    """把 "app=ZooResearch;domain=1" 形式的细节字段拆成字典"""
    fields = {}
    for part in detail.split(";"):
        if "=" in part:
            key, value = part.split("=", 1)
            fields[key] = value
    return fields


class UsageLog:
    """只追加、时间戳不递减的使用日志"""

    def __init__(self, resource_id: int, entries: Iterable[UsageLogEntry] = ()):
        self.resource_id = resource_id
        self._entries: List[UsageLogEntry] = []
        for entry in entries:
            self.append(entry)

    @property
    def entries(self) -> Tuple[UsageLogEntry, ...]:
        return tuple(self._entries)

    def append(self, entry: UsageLogEntry) -> None:
        if entry.resource_id != self.resource_id:
            raise ValueError(f"日志条目属于资源 {entry.resource_id}，而不是 {self.resource_id}")
        if self._entries and entry.timestamp < self._entries[-1].timestamp:
            raise ValueError("使用日志的时间戳不能回退")
        self._entries.append(entry)

    def record(self, timestamp: int, action: LogAction, detail: str = "") -> UsageLogEntry:
        entry = UsageLogEntry(timestamp, self.resource_id, action, detail)
        self.append(entry)
        return entry

    def last_timestamp(self) -> int:
        return self._entries[-1].timestamp if self._entries else 0

    def copy(self) -> "UsageLog":
        return UsageLog(self.resource_id, self._entries)

    def count(self, action: LogAction) -> int:
        return sum(1 for entry in self._entries if entry.action == action)

    def to_lines(self) -> str:
        return "".join(json.dumps(e.to_record(), sort_keys=True) + "\n" for e in self._entries)

    @classmethod
    def from_lines(cls, text: str) -> List["UsageLog"]:
        """
        解析逐行 JSON 证据，一份证据可包含多个资源的日志

        Returns:
            按资源首次出现顺序排列的日志列表
        """
        logs = {}
        offset = 0
        for line in text.splitlines(keepends=True):
            stripped = line.strip()
            if stripped:
                try:
                    entry = UsageLogEntry.from_record(json.loads(stripped))
                    logs.setdefault(entry.resource_id, cls(entry.resource_id)).append(entry)
                except (ValueError, KeyError, TypeError) as e:
                    raise MalformedMetafile(f"无法解析日志记录: {e}", offset) from e
            offset += len(line.encode("utf-8"))
        return list(logs.values())

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, UsageLog) and other.resource_id == self.resource_id \
            and other._entries == self._entries
