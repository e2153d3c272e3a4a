#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
异常定义模块

所有 ReGov 组件共用的异常层次结构
"""

from typing import Optional


class ReGovError(Exception):
    """ReGov 异常基类"""


# ---------------------------------------------------------------- 策略

class PolicyError(ReGovError):
    """使用策略相关错误"""


class NonPositiveDuration(PolicyError):
    """时间规则的保留时长必须大于 0"""


class ZeroAccessCount(PolicyError):
    """访问计数规则必须至少为 1"""


class UnknownDomainCode(PolicyError):
    """未登记的应用领域代码"""


class UnknownRegionCode(PolicyError):
    """未登记的地区代码"""


class MalformedMetafile(PolicyError):
    """元文件格式错误，附带出错的字节偏移"""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (偏移 {offset})")
        self.offset = offset


# ---------------------------------------------------------------- 账本

class LedgerError(ReGovError):
    """账本错误"""


class BadSignature(LedgerError):
    """交易签名校验失败"""


class BadNonce(LedgerError):
    """交易序号不递增"""


class UnknownAddress(LedgerError):
    """合约地址不存在"""


class UnknownKind(LedgerError):
    """未注册的合约类型"""


class UnknownFunction(LedgerError):
    """合约没有该函数，或在只读接口上调用了写函数"""


class LedgerUnavailable(LedgerError):
    """账本暂时不可用"""


class GasTableError(LedgerError):
    """Gas 费用表配置错误"""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class TransactionReverted(LedgerError):
    """交易被合约回滚"""

    def __init__(self, reason: str):
        super().__init__(f"交易回滚: {reason}")
        self.reason = reason


class ContractRevert(ReGovError):
    """合约代码内部抛出，由账本转换为回滚回执"""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------- 数据存储

class DatastoreError(ReGovError):
    """个人在线数据存储错误"""


class StorageExists(DatastoreError):
    """存储目录已初始化"""


class DuplicatePath(DatastoreError):
    """资源路径已被占用"""


class InvalidPolicy(DatastoreError):
    """上传时附带的策略无效"""


class NotOwnedHere(DatastoreError):
    """资源不属于本数据存储"""


# ---------------------------------------------------------------- 飞地

class EnclaveError(ReGovError):
    """可信执行环境错误"""


class AlreadyStored(EnclaveError):
    """资源已存放在飞地中"""


class UnknownResource(EnclaveError):
    """飞地中没有该资源"""


class UnknownApp(EnclaveError):
    """应用未在本机应用注册表中登记"""


class SealingError(EnclaveError):
    """密封存储完整性校验失败"""


class ProviderUnavailable(EnclaveError):
    """Ocall 上下文提供者不可用"""


class EnclaveUnavailable(EnclaveError):
    """飞地未运行"""


# ---------------------------------------------------------------- 模拟器

class SimulationError(ReGovError):
    """网络模拟错误"""


class ConfigError(SimulationError):
    """网络配置错误"""


class ScriptError(SimulationError):
    """场景脚本错误，附带出错的步骤"""

    def __init__(self, message: str, step: int = 0):
        super().__init__(f"第 {step} 步: {message}" if step else message)
        self.step = step


class SessionNotFinished(SimulationError):
    """监控会话尚未结束"""
