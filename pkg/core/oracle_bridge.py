#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
预言机桥接模块

节点内运行的链下预言机组件：
推入式（push-in）把元数据和交易提交到账本；
拉取式（pull-in）监听 NewMonitoring 事件，从本地飞地导出使用日志并回调链上
"""

from typing import TYPE_CHECKING, Any, Optional, Tuple

from loguru import logger

from core.errors import BadNonce, EnclaveUnavailable, LedgerError
from core.identity import NodeIdentity
from core.ledger import DEPLOY, Ledger, Receipt, Transaction

if TYPE_CHECKING:
    from core.enclave import Enclave


class MemoryCursorStore:
    """未绑定元文件时使用的内存游标"""

    def __init__(self, value: int = 0):
        self._value = value

    def load(self) -> int:
        return self._value

    def save(self, value: int) -> None:
        self._value = value


class OracleBridge:
    """节点的预言机组件"""

    def __init__(self, identity: NodeIdentity, ledger: Ledger, oracle_address: str = "",
                 enclave: Optional["Enclave"] = None, cursor_store=None):
        """
        初始化预言机组件

        Args:
            identity: 节点身份，必须持有私钥
            ledger: 账本
            oracle_address: PullInOracle 合约地址
            enclave: 本节点的飞地；只做数据提供方时可为空
            cursor_store: 带 load()/save() 的游标存储
        """
        if not identity.has_private_key:
            raise ValueError("预言机组件需要持有私钥的节点身份")
        self.identity = identity
        self.ledger = ledger
        self.oracle_address = oracle_address
        self.enclave = enclave
        self.cursor_store = cursor_store or MemoryCursorStore()
        self._next_nonce: Optional[int] = None

    @property
    def node_id(self) -> str:
        return self.identity.node_id

    # ------------------------------------------------------------ push-in

    def _submit(self, target: str, function: str, args: Tuple[Any, ...]) -> Receipt:
        if self._next_nonce is None:
            self._next_nonce = self.ledger.next_nonce(self.identity)
        tx = Transaction.create(self.identity, target, function, args, self._next_nonce)
        try:
            receipt = self.ledger.submit(tx)
        except BadNonce:
            # 本地序号落后（例如同一身份在别处提交过），刷新后重试一次
            logger.warning(f"交易序号 {tx.nonce} 过期，刷新后重试")
            tx = Transaction.create(self.identity, target, function, args,
                                    self.ledger.next_nonce(self.identity))
            receipt = self.ledger.submit(tx)
        self._next_nonce = tx.nonce + 1
        return receipt

    def push_in_submit(self, target: str, function: str, *args) -> Receipt:
        """
        以本节点身份签名并提交交易

        Args:
            target: 合约地址
            function: 函数名
            *args: 函数参数

        Returns:
            交易回执
        """
        receipt = self._submit(target, function, args)
        logger.debug(f"推入交易 {function} -> {target[:12]}: {receipt.status}")
        return receipt

    def push_in_deploy(self, kind: str, *init_args) -> Tuple[Optional[str], Receipt]:
        receipt = self._submit(DEPLOY, kind, init_args)
        return receipt.contract_address, receipt

    # ------------------------------------------------------------ pull-in

    def _held_resources(self, resource_ids) -> list:
        if self.enclave is None:
            return []
        return [rid for rid in resource_ids if self.enclave.has_log(rid)]

    def poll_and_dispatch(self) -> int:
        """
        扫描游标之后的事件并回应发给本节点的监控请求

        Returns:
            提交的回调数量
        """
        cursor = self.cursor_store.load()
        handled = 0

        for event in self.ledger.events_since(cursor):
            if (event.name == "NewMonitoring" and event.contract == self.oracle_address
                    and self.node_id in event.payload.get("responders", [])):
                session_id = event.payload["sessionId"]
                try:
                    held = self._held_resources(event.payload.get("resourceIds", []))
                    receipt = None
                    if held:
                        evidence = "".join(
                            self.enclave.get_usage_log(rid, session_id).to_lines() for rid in held
                        )
                        receipt = self.push_in_submit(self.oracle_address, "_callback", session_id, evidence)
                except (EnclaveUnavailable, LedgerError) as e:
                    # 游标停在该事件之前，下次轮询重试
                    logger.warning(f"监控会话 {session_id} 暂时无法回应: {e}")
                    self.cursor_store.save(cursor)
                    return handled
                if receipt is not None:
                    handled += 1
                    logger.info(f"已回应监控会话 {session_id}: {len(held)} 份日志, {receipt.status}")
                else:
                    logger.debug(f"监控会话 {session_id} 涉及的资源本节点未持有，跳过")
            cursor = event.sequence

        self.cursor_store.save(cursor)
        return handled
