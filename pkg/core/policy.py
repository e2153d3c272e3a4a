#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
使用策略模块

定义四类义务规则（时间、访问计数、领域、地理）、使用策略、
默认/专属策略继承规则以及 DTobligations.json 元文件格式
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import ClassVar, Dict, FrozenSet, List, Optional, Union

from core.errors import (
    MalformedMetafile, NonPositiveDuration, PolicyError, UnknownDomainCode,
    UnknownRegionCode, ZeroAccessCount,
)

SECONDS_PER_DAY = 86400


class RuleType(str, Enum):
    """规则类型，取值即拒绝原因及日志中的名称"""

    TEMPORAL = "temporal"
    ACCESS_COUNTER = "access_counter"
    DOMAIN = "domain"
    GEOGRAPHICAL = "geographical"

    @property
    def metafile_key(self) -> str:
        return _METAFILE_KEYS[self]

    @classmethod
    def from_name(cls, name: str) -> "RuleType":
        """接受规则类型名或元文件键名"""
        for rule_type in cls:
            if name in (rule_type.value, rule_type.metafile_key):
                return rule_type
        raise PolicyError(f"未知规则类型: {name}")


_METAFILE_KEYS = {
    RuleType.TEMPORAL: "temporal",
    RuleType.ACCESS_COUNTER: "accessCounter",
    RuleType.DOMAIN: "domain",
    RuleType.GEOGRAPHICAL: "country",
}

# 元文件中的字段顺序固定，保证输出逐字节可比
METAFILE_ORDER = (RuleType.TEMPORAL, RuleType.ACCESS_COUNTER, RuleType.DOMAIN, RuleType.GEOGRAPHICAL)


class Domain(IntEnum):
    """应用领域代码"""

    RESEARCH = 1
    SOCIAL = 2
    FINANCIAL = 3
    MEDICAL = 4


DOMAIN_CODES = frozenset(int(d) for d in Domain)


@dataclass(frozen=True)
class Region:
    code: int
    name: str
    countries: FrozenSet[int]


# ISO-3166 数字代码
EU_MEMBERS = frozenset({
    40, 56, 100, 191, 196, 203, 208, 233, 246, 250, 276, 300, 348, 372,
    380, 428, 440, 442, 470, 528, 616, 620, 642, 703, 705, 724, 752,
})

# 地区代码沿用联合国 M49 的大洲编码
REGIONS: Dict[int, Region] = {
    150: Region(150, "Europe", EU_MEMBERS | {826, 578, 756, 352}),
    19: Region(19, "Americas", frozenset({840, 124, 76, 484, 32, 152, 170})),
    142: Region(142, "Asia", frozenset({392, 156, 356, 410, 702, 764, 360})),
    2: Region(2, "Africa", frozenset({710, 566, 818, 404, 504, 231})),
    9: Region(9, "Oceania", frozenset({36, 554, 242})),
}

EUROPE = 150
IRELAND = 372
UNITED_STATES = 840


def region_code_for(name: str) -> int:
    """按名称（不区分大小写）或数字字符串查找地区代码"""
    if name.isdigit() and int(name) in REGIONS:
        return int(name)
    for region in REGIONS.values():
        if region.name.lower() == name.lower():
            return region.code
    raise UnknownRegionCode(f"未知地区: {name}")


def domain_code_for(name: str) -> int:
    """按名称（不区分大小写）或数字字符串查找领域代码"""
    if name.isdigit():
        code = int(name)
        if code in DOMAIN_CODES:
            return code
    else:
        try:
            return int(Domain[name.upper()])
        except KeyError:
            pass
    raise UnknownDomainCode(f"未知领域: {name}")


def country_in_region(country_code: int, region_code: int) -> bool:
    region = REGIONS.get(region_code)
    if region is None:
        raise UnknownRegionCode(f"未知地区代码: {region_code}")
    return country_code in region.countries


# ---------------------------------------------------------------- 规则

@dataclass(frozen=True)
class TemporalRule:
    """资源在消费者设备上的最长保留时间（秒）"""

    max_retention: int
    rule_type: ClassVar[RuleType] = RuleType.TEMPORAL

    @property
    def value(self) -> int:
        return self.max_retention


@dataclass(frozen=True)
class AccessCounterRule:
    """最多允许的本地访问次数"""

    max_accesses: int
    rule_type: ClassVar[RuleType] = RuleType.ACCESS_COUNTER

    @property
    def value(self) -> int:
        return self.max_accesses


@dataclass(frozen=True)
class DomainRule:
    """允许打开资源的应用领域"""

    domain_code: int
    rule_type: ClassVar[RuleType] = RuleType.DOMAIN

    @property
    def value(self) -> int:
        return self.domain_code


@dataclass(frozen=True)
class GeographicalRule:
    """允许使用资源的地区"""

    region_code: int
    rule_type: ClassVar[RuleType] = RuleType.GEOGRAPHICAL

    @property
    def value(self) -> int:
        return self.region_code


UsageRule = Union[TemporalRule, AccessCounterRule, DomainRule, GeographicalRule]

_RULE_CLASSES = {
    RuleType.TEMPORAL: TemporalRule,
    RuleType.ACCESS_COUNTER: AccessCounterRule,
    RuleType.DOMAIN: DomainRule,
    RuleType.GEOGRAPHICAL: GeographicalRule,
}


def make_rule(rule_type: RuleType, value: int) -> UsageRule:
    return _RULE_CLASSES[rule_type](value)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def validate_rule(rule: UsageRule) -> None:
    """
    校验单条规则的取值范围

    Args:
        rule: 待校验的规则

    Raises:
        NonPositiveDuration, ZeroAccessCount, UnknownDomainCode, UnknownRegionCode
    """
    if not _is_int(rule.value):
        raise PolicyError(f"{rule.rule_type.value} 规则的参数必须是整数: {rule.value!r}")

    if isinstance(rule, TemporalRule):
        if rule.max_retention <= 0:
            raise NonPositiveDuration(f"保留时长必须大于 0: {rule.max_retention}")
    elif isinstance(rule, AccessCounterRule):
        if rule.max_accesses < 1:
            raise ZeroAccessCount(f"访问次数必须至少为 1: {rule.max_accesses}")
    elif isinstance(rule, DomainRule):
        if rule.domain_code not in DOMAIN_CODES:
            raise UnknownDomainCode(f"未知领域代码: {rule.domain_code}")
    elif isinstance(rule, GeographicalRule):
        if rule.region_code not in REGIONS:
            raise UnknownRegionCode(f"未知地区代码: {rule.region_code}")
    else:
        raise PolicyError(f"未知规则: {rule!r}")


# ---------------------------------------------------------------- 策略

@dataclass(frozen=True)
class UsagePolicy:
    """每种规则类型最多一条；缺失的规则不施加约束"""

    temporal: Optional[TemporalRule] = None
    access_counter: Optional[AccessCounterRule] = None
    domain: Optional[DomainRule] = None
    geographical: Optional[GeographicalRule] = None

    def __post_init__(self):
        for rule_type in RuleType:
            rule = getattr(self, rule_type.name.lower())
            if rule is not None and not isinstance(rule, _RULE_CLASSES[rule_type]):
                raise PolicyError(f"{rule_type.value} 位置上的规则类型错误: {rule!r}")

    @classmethod
    def of(cls, *rules: UsageRule) -> "UsagePolicy":
        policy = cls()
        for rule in rules:
            policy = policy.with_rule(rule)
        return policy

    def get(self, rule_type: RuleType) -> Optional[UsageRule]:
        return getattr(self, rule_type.name.lower())

    def with_rule(self, rule: UsageRule) -> "UsagePolicy":
        return replace(self, **{rule.rule_type.name.lower(): rule})

    def without_rule(self, rule_type: RuleType) -> "UsagePolicy":
        return replace(self, **{rule_type.name.lower(): None})

    def rules(self) -> List[UsageRule]:
        return [rule for rule in (self.get(t) for t in METAFILE_ORDER) if rule is not None]

    def is_empty(self) -> bool:
        return not self.rules()

    def validate(self) -> None:
        for rule in self.rules():
            validate_rule(rule)

    def to_dict(self) -> Dict[str, int]:
        return {rule.rule_type.metafile_key: rule.value for rule in self.rules()}


def effective_policy(default_policy: UsagePolicy,
                     specific_policy: Optional[UsagePolicy] = None) -> UsagePolicy:
    """
    专属策略整体覆盖默认策略，不做逐条合并

    Args:
        default_policy: 数据存储的默认策略
        specific_policy: 资源的专属策略

    Returns:
        对该资源生效的策略
    """
    return specific_policy if specific_policy is not None else default_policy


# ---------------------------------------------------------------- 元文件

def serialize_policy(policy: UsagePolicy) -> bytes:
    """按固定字段顺序输出紧凑 JSON"""
    return json.dumps(policy.to_dict(), separators=(",", ":")).encode("utf-8")


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def policy_from_dict(data: dict, text: str = "") -> UsagePolicy:
    """由已解析的 JSON 对象构造策略，text 仅用于定位错误偏移"""
    if not isinstance(data, dict):
        raise MalformedMetafile("策略必须是 JSON 对象", 0)

    keys = {rule_type.metafile_key: rule_type for rule_type in RuleType}
    policy = UsagePolicy()
    for key, value in data.items():
        offset = _byte_offset(text, max(text.find(f'"{key}"'), 0))
        rule_type = keys.get(key)
        if rule_type is None:
            raise MalformedMetafile(f"未知字段: {key}", offset)
        if not _is_int(value):
            raise MalformedMetafile(f"字段 {key} 必须是整数", offset)
        rule = make_rule(rule_type, value)
        try:
            validate_rule(rule)
        except PolicyError as e:
            # 保留具体的规则错误类型，调用方可区分
            raise type(e)(f"{e} (偏移 {offset})") from e
        policy = policy.with_rule(rule)
    return policy


def parse_policy(data: Union[bytes, str]) -> UsagePolicy:
    """
    解析策略元文件

    Args:
        data: JSON 字节串或文本

    Returns:
        解析出的策略

    Raises:
        MalformedMetafile: 格式错误，附带字节偏移
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedMetafile("元文件不是合法的 UTF-8", e.start) from e
    else:
        text = data

    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedMetafile(f"JSON 解析失败: {e.msg}", _byte_offset(text, e.pos)) from e

    return policy_from_dict(obj, text)


@dataclass(frozen=True)
class ResourceRef:
    """链上登记的资源引用"""

    resource_id: int
    pod_id: int
    url: str
    owner: bytes = field(repr=False)

    def __post_init__(self):
        if self.resource_id < 1:
            raise ValueError(f"资源编号必须从 1 开始: {self.resource_id}")
        if not self.url:
            raise ValueError("资源地址不能为空")


def mesoplodon_policy() -> UsagePolicy:
    """激励场景中 Bob 为 Mesoplodon.jpg 设置的策略"""
    return UsagePolicy(
        temporal=TemporalRule(20 * SECONDS_PER_DAY),
        access_counter=AccessCounterRule(100),
        domain=DomainRule(int(Domain.RESEARCH)),
        geographical=GeographicalRule(EUROPE),
    )
