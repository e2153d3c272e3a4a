#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
账本模块

进程内的确定性区块链替代品：签名交易串行提交、合约托管、
按费用表逐函数计费以及只追加的事件日志
"""

import configparser
import copy
import hashlib
import json
import threading
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from types import MappingProxyType
from typing import Any, Callable, ClassVar, Dict, List, Mapping, Optional, Tuple, Type, Union

from loguru import logger

from core.errors import (
    BadNonce, BadSignature, ContractRevert, GasTableError, LedgerError,
    LedgerUnavailable, TransactionReverted, UnknownAddress, UnknownFunction, UnknownKind,
)
from core.identity import NodeIdentity, verify_signature

DEPLOY = "DEPLOY"

# 默认费用表；未实测的函数按同类函数取值
DEFAULT_GAS_TABLE: Dict[str, int] = {
    "DTindexing.DEPLOY": 4824135,
    "DTindexing.registerPod": 2703393,
    "DTindexing.registerResource": 143004,
    "DTindexing.deactivateResource": 21465,
    "DTindexing.deactivatePod": 21465,
    "DTobligations.DEPLOY": 2650030,
    "DTobligations.addDefaultAccessCounterObligation": 62627,
    "DTobligations.addDefaultTemporalObligation": 62638,
    "DTobligations.addDefaultDomainObligation": 44219,
    "DTobligations.addDefaultCountryObligation": 62561,
    "DTobligations.addAccessCounterObligation": 138768,
    "DTobligations.addTemporalObligation": 97737,
    "DTobligations.addCountryObligation": 97728,
    "DTobligations.addDomainObligation": 79452,
    "DTobligations.removeDefaultAccessCounterObligation": 23780,
    "DTobligations.removeDefaultTemporalObligation": 16079,
    "DTobligations.removeDefaultDomainObligation": 24747,
    "DTobligations.removeDefaultCountryObligation": 23758,
    "DTobligations.removeAccessCounterObligation": 28184,
    "DTobligations.removeTemporalObligation": 28151,
    "DTobligations.removeCountryObligation": 28173,
    "DTobligations.removeDomainObligation": 38111,
    "DTobligations.monitorCompliance": 42000,
    "DTobligations.receiveEvidence": 0,
    "PullInOracle.DEPLOY": 0,
    "PullInOracle.initializeMonitoring": 0,
    "PullInOracle._callback": 0,
    "PullInOracle.closeSession": 0,
}


def account_key(account: Union[bytes, str, NodeIdentity]) -> str:
    """账户统一表示为公钥十六进制串，合约地址保持 0x 前缀形式"""
    if isinstance(account, NodeIdentity):
        return account.node_id
    if isinstance(account, bytes):
        return account.hex()
    return account


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(value: Any):
    if is_dataclass(value):
        return asdict(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, bytes):
        return value.hex()
    raise TypeError(f"无法序列化: {type(value).__name__}")


# ---------------------------------------------------------------- 费用表

class GasTable:
    """只读的 (合约类型, 函数) → Gas 映射"""

    def __init__(self, overrides: Optional[Mapping[str, int]] = None):
        entries = dict(DEFAULT_GAS_TABLE)
        for key, value in (overrides or {}).items():
            if "." not in key:
                raise GasTableError(f"费用表键必须形如 ContractKind.functionName: {key}", key)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise GasTableError(f"费用表取值必须是非负整数: {key}={value!r}", key)
            entries[key] = value
        self._entries = MappingProxyType(entries)

    @classmethod
    def from_file(cls, path: str) -> "GasTable":
        """
        从 INI 文件的 [gas] 节加载费用表

        Args:
            path: 配置文件路径

        Returns:
            覆盖了默认值的费用表
        """
        parser = configparser.ConfigParser()
        parser.optionxform = str  # 保留函数名大小写
        if not parser.read(path, encoding="utf-8"):
            raise GasTableError(f"费用表文件不存在: {path}")
        if not parser.has_section("gas"):
            raise GasTableError(f"费用表文件缺少 [gas] 节: {path}")

        overrides = {}
        for key, raw in parser.items("gas"):
            try:
                overrides[key] = int(raw)
            except ValueError as e:
                raise GasTableError(f"费用表取值不是整数: {key}={raw}", key) from e
        logger.info(f"费用表加载成功: {path} ({len(overrides)} 项覆盖)")
        return cls(overrides)

    def validate(self, kinds: Mapping[str, Type["Contract"]]) -> None:
        """检查每个键都对应已注册的合约函数，且每个写函数都有取值"""
        for key in self._entries:
            kind, function = key.split(".", 1)
            contract_cls = kinds.get(kind)
            if contract_cls is None:
                raise GasTableError(f"费用表中的合约类型未注册: {key}", key)
            if function != DEPLOY and function not in contract_cls.abi():
                raise GasTableError(f"费用表中的函数不存在: {key}", key)
        for kind, contract_cls in kinds.items():
            for name, method in contract_cls.abi().items():
                if not method.read_only and f"{kind}.{name}" not in self._entries:
                    raise GasTableError(f"写函数缺少费用表项: {kind}.{name}", f"{kind}.{name}")

    def cost(self, kind: str, function: str) -> int:
        key = f"{kind}.{function}"
        if key not in self._entries:
            raise GasTableError(f"费用表缺少条目: {key}", key)
        return self._entries[key]

    def entries(self) -> Mapping[str, int]:
        return self._entries


# ---------------------------------------------------------------- 交易、回执与事件

@dataclass(frozen=True)
class Transaction:
    sender: bytes
    target: str
    function: str
    args: Tuple[Any, ...]
    nonce: int
    signature: bytes = b""

    def signing_payload(self) -> bytes:
        return canonical_json([self.sender.hex(), self.target, self.function,
                               list(self.args), self.nonce]).encode("utf-8")

    @property
    def tx_hash(self) -> str:
        return hashlib.sha256(self.signing_payload() + self.signature).hexdigest()

    @classmethod
    def create(cls, identity: NodeIdentity, target: str, function: str,
               args: Tuple[Any, ...], nonce: int) -> "Transaction":
        """构造并签名交易"""
        unsigned = cls(identity.public_key, target, function, tuple(args), nonce)
        return cls(identity.public_key, target, function, tuple(args), nonce,
                   identity.sign(unsigned.signing_payload()))


@dataclass(frozen=True)
class Event:
    contract: str
    name: str
    payload: Dict[str, Any]
    sequence: int
    block_index: int

    def to_record(self) -> dict:
        return {
            "contract": self.contract,
            "name": self.name,
            "payload": self.payload,
            "sequence": self.sequence,
            "block": self.block_index,
        }


@dataclass(frozen=True)
class Receipt:
    tx_hash: str
    sender: str
    target: str
    function: str
    status: str
    gas_charged: int
    block_index: int
    emitted: Tuple[Event, ...] = ()
    return_value: Any = None
    revert_reason: Optional[str] = None
    contract_address: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def raise_for_status(self) -> "Receipt":
        if not self.ok:
            raise TransactionReverted(self.revert_reason or "unknown")
        return self


# ---------------------------------------------------------------- 合约基类

def contract_function(name: str, read_only: bool = False) -> Callable:
    """把方法登记为合约 ABI 中的函数"""

    def decorator(method):
        method.abi_name = name
        method.read_only = read_only
        return method

    return decorator


class Contract:
    """托管在账本上的合约状态机；状态只在交易提交时改变"""

    KIND: ClassVar[str] = ""
    _abi_cache: ClassVar[Dict[type, Dict[str, Callable]]] = {}

    def __init__(self, address: str):
        self.address = address

    @classmethod
    def abi(cls) -> Dict[str, Callable]:
        if cls not in Contract._abi_cache:
            functions = {}
            for attr in dir(cls):
                method = getattr(cls, attr)
                if callable(method) and hasattr(method, "abi_name"):
                    functions[method.abi_name] = method
            Contract._abi_cache[cls] = functions
        return Contract._abi_cache[cls]

    def invoke(self, ctx: "ExecutionContext", function: str, args: Tuple[Any, ...]) -> Any:
        method = self.abi().get(function)
        if method is None:
            raise UnknownFunction(f"{self.KIND} 没有函数 {function}")
        if ctx.read_only and not method.read_only:
            raise ContractRevert(f"staticCall:{function}")
        try:
            return method(self, ctx, *args)
        except TypeError as e:
            raise ContractRevert(f"badArguments:{function}") from e

    def state_dict(self) -> dict:
        return json.loads(canonical_json(vars(self)))


class ExecutionContext:
    """一次合约调用的上下文，相当于 msg.sender 与区块信息"""

    def __init__(self, ledger: "Ledger", sender: str, this: str, block_index: int,
                 events: List[Tuple[str, str, dict]], read_only: bool = False):
        self.ledger = ledger
        self.sender = sender
        self.this = this
        self.block_index = block_index
        self.events = events
        self.read_only = read_only

    def emit(self, name: str, **payload) -> None:
        if self.read_only:
            raise ContractRevert("staticCall:emit")
        self.events.append((self.this, name, json.loads(canonical_json(payload))))

    def deploy(self, kind: str, *init_args) -> str:
        """嵌套部署，不单独计费"""
        if self.read_only:
            raise ContractRevert("staticCall:deploy")
        return self.ledger._create(self, kind, init_args, creator=self.this)

    def call(self, address: str, function: str, *args) -> Any:
        child = ExecutionContext(self.ledger, self.this, address, self.block_index,
                                 self.events, self.read_only)
        return self.ledger._contract(address).invoke(child, function, args)

    def read(self, address: str, function: str, *args) -> Any:
        child = ExecutionContext(self.ledger, self.this, address, self.block_index,
                                 self.events, read_only=True)
        return self.ledger._contract(address).invoke(child, function, args)


# ---------------------------------------------------------------- 账本

class Ledger:
    """单一串行化点：交易按到达顺序逐个提交，每个区块一笔交易，即时终局"""

    def __init__(self, gas_table: Optional[GasTable] = None,
                 kinds: Optional[Mapping[str, Type[Contract]]] = None):
        if kinds is None:
            from core.contracts import CONTRACT_KINDS
            kinds = CONTRACT_KINDS
        self.gas_table = gas_table or GasTable()
        self.gas_table.validate(kinds)
        self.available = True

        self._kinds = dict(kinds)
        self._lock = threading.RLock()
        self._contracts: Dict[str, Contract] = {}
        self._created = 0
        self._nonces: Dict[str, int] = {}
        self._receipts: List[Receipt] = []
        self._events: List[Event] = []
        self._gas_by_account: Dict[str, int] = {}
        self._height = 0

        logger.info(f"账本初始化完成，已注册合约类型: {', '.join(sorted(self._kinds))}")

    # ------------------------------------------------------------ 写入

    def submit(self, tx: Transaction) -> Receipt:
        """
        提交一笔签名交易

        Args:
            tx: 已签名交易

        Returns:
            交易回执；合约回滚体现在回执状态中，同样计费

        Raises:
            BadSignature, BadNonce, UnknownAddress, UnknownKind, UnknownFunction, LedgerUnavailable
        """
        with self._lock:
            if not self.available:
                raise LedgerUnavailable("账本不可用")
            sender = account_key(tx.sender)
            if not verify_signature(tx.sender, tx.signing_payload(), tx.signature):
                raise BadSignature(f"交易签名无效: {tx.tx_hash[:16]}")
            if tx.nonce <= self._nonces.get(sender, 0):
                raise BadNonce(f"交易序号 {tx.nonce} 不大于上一次的 {self._nonces.get(sender, 0)}")

            if tx.target == DEPLOY:
                kind = tx.function
                if kind not in self._kinds:
                    raise UnknownKind(f"未注册的合约类型: {kind}")
                gas = self.gas_table.cost(kind, DEPLOY)
            else:
                contract = self._contract(tx.target)
                method = contract.abi().get(tx.function)
                if method is None or method.read_only:
                    raise UnknownFunction(f"{contract.KIND} 没有写函数 {tx.function}")
                gas = self.gas_table.cost(contract.KIND, tx.function)

            self._nonces[sender] = tx.nonce
            self._height += 1
            return self._execute(tx, sender, gas)

    def deploy(self, tx: Transaction) -> Tuple[Optional[str], Receipt]:
        """部署交易：tx.target 为 DEPLOY，tx.function 为合约类型，tx.args 为构造参数"""
        if tx.target != DEPLOY:
            raise ValueError("部署交易的目标必须是 DEPLOY")
        receipt = self.submit(tx)
        return receipt.contract_address, receipt

    def produce_block(self) -> int:
        """产生一个空区块，推进区块高度"""
        with self._lock:
            self._height += 1
            return self._height

    def _execute(self, tx: Transaction, sender: str, gas: int) -> Receipt:
        contracts_before = copy.deepcopy(self._contracts)
        created_before = self._created
        pending: List[Tuple[str, str, dict]] = []
        ctx = ExecutionContext(self, sender, tx.target, self._height, pending)

        status, reason, value, address = "ok", None, None, None
        try:
            if tx.target == DEPLOY:
                address = self._create(ctx, tx.function, tx.args, creator=sender)
                value = address
            else:
                value = self._contracts[tx.target].invoke(ctx, tx.function, tx.args)
        except (ContractRevert, LedgerError) as e:
            self._contracts = contracts_before
            self._created = created_before
            status, reason = "reverted", getattr(e, "reason", str(e))

        emitted = []
        if status == "ok":
            for contract, name, payload in pending:
                event = Event(contract, name, payload, len(self._events) + 1, self._height)
                self._events.append(event)
                emitted.append(event)

        receipt = Receipt(
            tx_hash=tx.tx_hash, sender=sender, target=tx.target, function=tx.function,
            status=status, gas_charged=gas, block_index=self._height, emitted=tuple(emitted),
            return_value=value, revert_reason=reason, contract_address=address,
        )
        self._receipts.append(receipt)
        self._gas_by_account[sender] = self._gas_by_account.get(sender, 0) + gas

        if receipt.ok:
            logger.debug(f"区块 {self._height}: {tx.function} 成功，Gas {gas}")
        else:
            logger.warning(f"区块 {self._height}: {tx.function} 回滚 ({reason})，Gas {gas}")
        return receipt

    def _create(self, ctx: ExecutionContext, kind: str, init_args, creator: str) -> str:
        contract_cls = self._kinds.get(kind)
        if contract_cls is None:
            raise UnknownKind(f"未注册的合约类型: {kind}")
        self._created += 1
        address = "0x" + hashlib.sha256(f"{creator}:{self._created}".encode("utf-8")).hexdigest()[:40]
        child = ExecutionContext(self, ctx.sender, address, ctx.block_index, ctx.events)
        try:
            contract = contract_cls(address, child, *init_args)
        except TypeError as e:
            raise ContractRevert(f"badArguments:{kind}") from e
        self._contracts[address] = contract
        logger.debug(f"合约 {kind} 部署于 {address}")
        return address

    # ------------------------------------------------------------ 读取

    def call(self, address: str, function: str, *args) -> Any:
        """
        只读调用：不改变状态、不计费、不产生回执

        Raises:
            UnknownAddress, UnknownFunction, TransactionReverted
        """
        contract = self._contract(address)
        method = contract.abi().get(function)
        if method is None or not method.read_only:
            raise UnknownFunction(f"{contract.KIND} 没有只读函数 {function}")
        ctx = ExecutionContext(self, "", address, self._height, [], read_only=True)
        try:
            return contract.invoke(ctx, function, args)
        except ContractRevert as e:
            raise TransactionReverted(e.reason) from e

    def _contract(self, address: str) -> Contract:
        contract = self._contracts.get(address)
        if contract is None:
            raise UnknownAddress(f"合约地址不存在: {address}")
        return contract

    def contract_kind(self, address: str) -> str:
        return self._contract(address).KIND

    def events_since(self, cursor: int) -> List[Event]:
        """返回序号大于 cursor 的全部事件；重复调用结果相同"""
        if cursor < 0:
            raise ValueError("游标不能为负")
        return list(self._events[cursor:])

    def latest_sequence(self) -> int:
        return len(self._events)

    def next_nonce(self, account: Union[bytes, str, NodeIdentity]) -> int:
        return self._nonces.get(account_key(account), 0) + 1

    @property
    def height(self) -> int:
        return self._height

    def receipts(self) -> List[Receipt]:
        return list(self._receipts)

    def gas_spent(self, account: Union[bytes, str, NodeIdentity]) -> int:
        return self._gas_by_account.get(account_key(account), 0)

    def total_gas(self) -> int:
        return sum(receipt.gas_charged for receipt in self._receipts)

    def function_key(self, receipt: Receipt) -> str:
        """回执对应的费用表键，如 DTindexing.DEPLOY"""
        if receipt.target == DEPLOY:
            return f"{receipt.function}.{DEPLOY}"
        return f"{self.contract_kind(receipt.target)}.{receipt.function}"

    def gas_by_function(self) -> Dict[str, int]:
        """按 合约类型.函数 汇总的 Gas"""
        totals: Dict[str, int] = {}
        for receipt in self._receipts:
            key = self.function_key(receipt)
            totals[key] = totals.get(key, 0) + receipt.gas_charged
        return totals

    def export_events(self) -> str:
        return "".join(json.dumps(e.to_record(), sort_keys=True) + "\n" for e in self._events)

    def state_digest(self) -> str:
        """全部合约状态的摘要，用于确定性和原子性比较"""
        state = {address: contract.state_dict() for address, contract in self._contracts.items()}
        return hashlib.sha256(canonical_json(state).encode("utf-8")).hexdigest()
