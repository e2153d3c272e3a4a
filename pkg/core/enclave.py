#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
飞地模块

消费者一侧的模拟可信执行环境：密封存储、ecall/ocall 边界、证明报告、
四种策略执行机制以及受保护的使用日志。
只有本模块声明的 ecall 是公开接口，资源内容只通过 access_protected_resource 的返回值离开飞地
"""

import base64
import hashlib
import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Tuple

from loguru import logger

from core.attestation import (
    DEFAULT_BUILD_ID, NONCE_SIZE, AttestationAuthority, enclave_measurement, request_hash,
)
from core.datastore import DataRequest
from core.errors import (
    AlreadyStored, EnclaveUnavailable, ProviderUnavailable, UnknownApp, UnknownResource,
)
from core.identity import NodeIdentity
from core.policy import (
    DOMAIN_CODES, RuleType, UsagePolicy, country_in_region, policy_from_dict,
)
from core.sealed_store import KIND_LOG, KIND_OBJECT, SealedStore
from core.usage_log import LogAction, UsageLog

UNLIMITED = -1

Clock = Callable[[], int]
Locator = Callable[[], int]


# ---------------------------------------------------------------- 应用注册表

@dataclass(frozen=True)
class AppDescriptor:
    app_id: str
    domain_code: int


class AppRegistry:
    """本机应用注册表，每个应用恰好属于一个领域"""

    def __init__(self):
        self._apps: Dict[str, AppDescriptor] = {}

    def register(self, app_id: str, domain_code: int) -> AppDescriptor:
        if not app_id:
            raise ValueError("应用编号不能为空")
        if domain_code not in DOMAIN_CODES:
            raise ValueError(f"未知领域代码: {domain_code}")
        if app_id in self._apps:
            raise ValueError(f"应用已登记: {app_id}")
        app = AppDescriptor(app_id, domain_code)
        self._apps[app_id] = app
        logger.debug(f"应用已登记: {app_id} (领域 {domain_code})")
        return app

    def authenticate(self, app_id: str) -> AppDescriptor:
        app = self._apps.get(app_id)
        if app is None:
            raise UnknownApp(f"应用未登记: {app_id}")
        return app

    def apps(self) -> List[AppDescriptor]:
        return sorted(self._apps.values(), key=lambda a: a.app_id)


# ---------------------------------------------------------------- 执行机制

class CounterOutcome(str, Enum):
    PASS = "pass"
    PASS_AND_DELETE = "pass_and_delete"
    FAIL = "fail"


def enforce_geographical(policy: UsagePolicy, location: Optional[int]) -> bool:
    """location 为 None 表示位置不可得，存在地理规则时判定失败"""
    if policy.geographical is None:
        return True
    if location is None:
        return False
    return country_in_region(location, policy.geographical.region_code)


def enforce_domain(policy: UsagePolicy, app: AppDescriptor) -> bool:
    if policy.domain is None:
        return True
    return app.domain_code == policy.domain.domain_code


def enforce_access_counter(remaining: int) -> Tuple[CounterOutcome, int]:
    """
    访问计数判定

    Args:
        remaining: 剩余访问次数，UNLIMITED 表示没有计数规则

    Returns:
        (判定结果, 新的剩余次数)
    """
    if remaining == UNLIMITED:
        return CounterOutcome.PASS, UNLIMITED
    if remaining > 1:
        return CounterOutcome.PASS, remaining - 1
    if remaining == 1:
        return CounterOutcome.PASS_AND_DELETE, 0
    return CounterOutcome.FAIL, remaining


@dataclass(frozen=True)
class AccessDecision:
    resource_id: int
    granted: bool
    payload: Optional[bytes] = None
    denied_rule: Optional[RuleType] = None
    remaining: Optional[int] = None
    deleted: bool = False


# ---------------------------------------------------------------- 飞地状态

@dataclass
class _StoredObject:
    payload: bytes
    policy: UsagePolicy
    retrieved_at: int
    remaining: int

    def to_bytes(self) -> bytes:
        return json.dumps({
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "policy": self.policy.to_dict(),
            "retrievedAt": self.retrieved_at,
            "remainingAccesses": self.remaining,
        }, sort_keys=True).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "_StoredObject":
        record = json.loads(data.decode("utf-8"))
        return cls(base64.b64decode(record["payload"]), policy_from_dict(record["policy"]),
                   record["retrievedAt"], record["remainingAccesses"])


class _EnclaveState:
    def __init__(self):
        self.objects: Dict[int, _StoredObject] = {}
        self.logs: Dict[int, UsageLog] = {}

    @classmethod
    def from_records(cls, records: Dict[Tuple[str, int], bytes]) -> "_EnclaveState":
        state = cls()
        for (kind, resource_id), data in records.items():
            if kind == KIND_OBJECT:
                state.objects[resource_id] = _StoredObject.from_bytes(data)
            else:
                logs = UsageLog.from_lines(data.decode("utf-8"))
                state.logs[resource_id] = logs[0] if logs else UsageLog(resource_id)
        return state

    def to_records(self) -> Dict[Tuple[str, int], bytes]:
        records = {(KIND_OBJECT, rid): obj.to_bytes() for rid, obj in self.objects.items()}
        records.update({(KIND_LOG, rid): log.to_lines().encode("utf-8") for rid, log in self.logs.items()})
        return records


class Enclave:
    """模拟的可信执行环境；所有 ecall 串行执行"""

    def __init__(self, identity: NodeIdentity, storage_path: str, authority: AttestationAuthority,
                 clock: Clock, locator: Locator, apps: Optional[AppRegistry] = None,
                 build_id: str = DEFAULT_BUILD_ID):
        """
        初始化飞地

        Args:
            identity: 节点身份，用于签名数据请求
            storage_path: 密封文件路径
            authority: 证明服务
            clock: get_trusted_time ocall 的提供者
            locator: get_geo_location ocall 的提供者
            apps: 本机应用注册表
            build_id: 飞地构建标识，决定度量值
        """
        self._identity = identity
        self._authority = authority
        self._clock = clock
        self._locator = locator
        self._store = SealedStore(storage_path)
        self._lock = threading.RLock()
        self._request_counter = 0
        self.measurement = enclave_measurement(build_id)
        self.apps = apps or AppRegistry()
        self.available = True
        if not self._store.exists():
            self._store.save({})
        logger.info(f"飞地启动: {storage_path} (度量值 {self.measurement.hex()[:16]})")

    # ------------------------------------------------------------ 内部

    @contextmanager
    def _ecall(self, mutating: bool = True) -> Iterator[_EnclaveState]:
        with self._lock:
            if not self.available:
                raise EnclaveUnavailable("飞地未运行")
            state = _EnclaveState.from_records(self._store.load())
            yield state
            if mutating:
                self._store.save(state.to_records())

    def get_trusted_time(self) -> int:
        """ocall"""
        return self._clock()

    def get_geo_location(self) -> int:
        """ocall"""
        return self._locator()

    def _log_time(self, log: UsageLog) -> int:
        try:
            return max(self.get_trusted_time(), log.last_timestamp())
        except ProviderUnavailable:
            return log.last_timestamp()

    # ------------------------------------------------------------ 状态切换

    def set_available(self, available: bool) -> None:
        self.available = available
        logger.info(f"飞地{'恢复运行' if available else '停止运行'}")

    def restart(self) -> None:
        """重启：生成新的密封密钥并重新密封仍存在的资源"""
        with self._lock:
            self._store.rekey()
            self.available = True

    # ------------------------------------------------------------ ecalls

    def build_data_request(self, url: str) -> DataRequest:
        """
        在飞地内构造数据请求：对地址签名并附上绑定该地址的证明报告

        Args:
            url: 资源完整地址

        Returns:
            数据请求
        """
        if not url:
            raise ValueError("请求地址不能为空")
        with self._lock:
            if not self.available:
                raise EnclaveUnavailable("飞地未运行")
            self._request_counter += 1
            nonce = hashlib.sha256(
                self.measurement + self._identity.public_key + self._request_counter.to_bytes(8, "big")
            ).digest()[:NONCE_SIZE]
            quote = self._authority.issue_quote(self.measurement, self._identity.public_key,
                                                request_hash(nonce, url), nonce)
            token = self._identity.sign(url.encode("utf-8"))
        return DataRequest(url, token, self._identity.public_key, quote)

    def store_resource(self, resource_id: int, payload: bytes, policy: UsagePolicy) -> None:
        """
        密封存放数据存储发来的资源

        Raises:
            AlreadyStored: 资源已存放
            ProviderUnavailable: 无法取得可信时间
        """
        with self._ecall() as state:
            if resource_id in state.objects:
                raise AlreadyStored(f"资源已存放在飞地中: {resource_id}")
            now = self.get_trusted_time()
            counter = policy.access_counter
            state.objects[resource_id] = _StoredObject(
                payload, policy, now, counter.max_accesses if counter else UNLIMITED,
            )
            log = state.logs.setdefault(resource_id, UsageLog(resource_id))
            log.record(max(now, log.last_timestamp()), LogAction.RETRIEVED,
                       ";".join(f"{k}={v}" for k, v in policy.to_dict().items()))
        logger.info(f"资源 {resource_id} 已存入飞地")

    def access_protected_resource(self, app_id: str, resource_id: int) -> AccessDecision:
        """
        应用访问受保护资源，依次执行 地理 → 领域 → 访问计数 检查

        Args:
            app_id: 发起访问的应用
            resource_id: 资源编号

        Returns:
            访问判定；授权时包含资源内容

        Raises:
            UnknownApp, UnknownResource
        """
        with self._ecall() as state:
            app = self.apps.authenticate(app_id)
            obj = state.objects.get(resource_id)
            if obj is None:
                raise UnknownResource(f"飞地中没有资源: {resource_id}")
            log = state.logs[resource_id]
            now = self._log_time(log)
            detail = [f"app={app.app_id}"]

            if obj.policy.geographical is not None:
                try:
                    location = self.get_geo_location()
                    detail.append(f"country={location}")
                except ProviderUnavailable:
                    location = None
                    detail.append("country=unavailable")
                if not enforce_geographical(obj.policy, location):
                    return self._deny(log, now, resource_id, RuleType.GEOGRAPHICAL, detail, obj)

            detail.append(f"domain={app.domain_code}")
            if not enforce_domain(obj.policy, app):
                return self._deny(log, now, resource_id, RuleType.DOMAIN, detail, obj)

            outcome, remaining = enforce_access_counter(obj.remaining)
            if outcome == CounterOutcome.FAIL:
                return self._deny(log, now, resource_id, RuleType.ACCESS_COUNTER, detail, obj)

            payload = obj.payload
            if remaining != UNLIMITED:
                detail.append(f"remaining={remaining}")
            log.record(now, LogAction.ACCESS_GRANTED, ";".join(detail))
            if outcome == CounterOutcome.PASS_AND_DELETE:
                del state.objects[resource_id]
                log.record(now, LogAction.DELETED_EXHAUSTED, "rule=access_counter")
                logger.info(f"资源 {resource_id} 访问次数已用完，已删除")
            else:
                obj.remaining = remaining
            logger.debug(f"应用 {app_id} 访问资源 {resource_id}: 授权")
            return AccessDecision(resource_id, True, payload, None, remaining,
                                  outcome == CounterOutcome.PASS_AND_DELETE)

    @staticmethod
    def _deny(log: UsageLog, now: int, resource_id: int, rule: RuleType, detail: List[str],
              obj: _StoredObject) -> AccessDecision:
        log.record(now, LogAction.ACCESS_DENIED, ";".join([f"rule={rule.value}"] + detail))
        logger.warning(f"资源 {resource_id} 访问被拒绝: {rule.value}")
        return AccessDecision(resource_id, False, denied_rule=rule, remaining=obj.remaining)

    def enforce_temporal_sweep(self) -> List[int]:
        """
        检查所有带时间规则的资源，删除超过保留期限的资源

        Returns:
            本次删除的资源编号
        """
        deleted = []
        with self._ecall() as state:
            for resource_id in sorted(state.objects):
                obj = state.objects[resource_id]
                if obj.policy.temporal is None:
                    continue
                log = state.logs[resource_id]
                try:
                    now = self.get_trusted_time()
                except ProviderUnavailable:
                    log.record(log.last_timestamp(), LogAction.TEMPORAL_CHECK, "provider_unavailable")
                    logger.warning(f"无法取得可信时间，跳过资源 {resource_id} 的时间检查")
                    continue
                now = max(now, log.last_timestamp())
                age = now - obj.retrieved_at
                limit = obj.policy.temporal.max_retention
                log.record(now, LogAction.TEMPORAL_CHECK, f"age={age};max={limit}")
                if age > limit:
                    del state.objects[resource_id]
                    log.record(now, LogAction.DELETED_EXPIRED, "rule=temporal")
                    deleted.append(resource_id)
                    logger.info(f"资源 {resource_id} 超过保留期限，已删除")
        return deleted

    def get_usage_log(self, resource_id: int, session_id: Optional[int] = None) -> UsageLog:
        """
        监控导出：先记录监控请求，再返回日志副本

        Raises:
            UnknownResource: 从未持有该资源
        """
        with self._ecall() as state:
            log = state.logs.get(resource_id)
            if log is None:
                raise UnknownResource(f"飞地从未持有资源: {resource_id}")
            log.record(self._log_time(log), LogAction.MONITORING_REQUEST,
                       f"session={session_id}" if session_id is not None else "")
            return log.copy()

    def inspect_usage_log(self, resource_id: int) -> UsageLog:
        """只读导出，不记录监控请求"""
        with self._ecall(mutating=False) as state:
            log = state.logs.get(resource_id)
            if log is None:
                raise UnknownResource(f"飞地从未持有资源: {resource_id}")
            return log.copy()

    def holds(self, resource_id: int) -> bool:
        with self._ecall(mutating=False) as state:
            return resource_id in state.objects

    def has_log(self, resource_id: int) -> bool:
        with self._ecall(mutating=False) as state:
            return resource_id in state.logs

    def remaining_accesses(self, resource_id: int) -> Optional[int]:
        """剩余访问次数；UNLIMITED 表示没有计数规则，未持有时为 None"""
        with self._ecall(mutating=False) as state:
            obj = state.objects.get(resource_id)
            return obj.remaining if obj else None

    def held_resources(self) -> List[int]:
        with self._ecall(mutating=False) as state:
            return sorted(state.objects)
