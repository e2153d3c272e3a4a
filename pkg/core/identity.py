#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
节点身份模块

每个节点对应一对 SECP256k1 公私钥，用于签名交易和可恢复公钥的数据请求令牌
"""

import hashlib
from typing import Optional

from ecdsa import SECP256k1, SigningKey, VerifyingKey
from ecdsa.util import sigdecode_string, sigencode_string
from loguru import logger

SIGNATURE_LENGTH = 65


def _digest(message: bytes) -> bytes:
    return hashlib.sha256(message).digest()


def _candidates(signature: bytes, digest: bytes):
    return VerifyingKey.from_public_key_recovery_with_digest(
        signature, digest, curve=SECP256k1,
        hashfunc=hashlib.sha256, sigdecode=sigdecode_string,
    )


class NodeIdentity:
    """节点身份；仅在所属节点上持有私钥"""

    def __init__(self, public_key: bytes, private_key: Optional[SigningKey] = None):
        self.public_key = bytes(public_key)
        self.private_key = private_key

    @classmethod
    def generate(cls) -> "NodeIdentity":
        return cls._from_signing_key(SigningKey.generate(curve=SECP256k1))

    @classmethod
    def from_seed(cls, seed: str) -> "NodeIdentity":
        """由种子字符串确定性地派生密钥，便于模拟运行可重放"""
        order = SECP256k1.order
        secexp = int.from_bytes(_digest(seed.encode("utf-8")), "big") % (order - 1) + 1
        return cls._from_signing_key(SigningKey.from_secret_exponent(secexp, curve=SECP256k1))

    @classmethod
    def from_hex(cls, public_hex: str, private_hex: Optional[str] = None) -> "NodeIdentity":
        private_key = None
        if private_hex:
            private_key = SigningKey.from_string(bytes.fromhex(private_hex), curve=SECP256k1)
        return cls(bytes.fromhex(public_hex), private_key)

    @classmethod
    def _from_signing_key(cls, signing_key: SigningKey) -> "NodeIdentity":
        public_key = signing_key.get_verifying_key().to_string("compressed")
        return cls(public_key, signing_key)

    @property
    def node_id(self) -> str:
        return self.public_key.hex()

    @property
    def has_private_key(self) -> bool:
        return self.private_key is not None

    def private_key_hex(self) -> str:
        if self.private_key is None:
            raise ValueError("该身份不包含私钥")
        return self.private_key.to_string().hex()

    def public_only(self) -> "NodeIdentity":
        return NodeIdentity(self.public_key)

    def sign(self, message: bytes) -> bytes:
        """
        生成可恢复公钥的签名

        Args:
            message: 待签名消息

        Returns:
            64 字节 r||s 加 1 字节恢复编号
        """
        if self.private_key is None:
            raise ValueError("该身份不包含私钥，无法签名")

        digest = _digest(message)
        signature = self.private_key.sign_digest_deterministic(
            digest, hashfunc=hashlib.sha256, sigencode=sigencode_string,
        )
        for index, candidate in enumerate(_candidates(signature, digest)):
            if candidate.to_string("compressed") == self.public_key:
                return signature + bytes([index])
        raise RuntimeError("无法确定签名的恢复编号")

    def __eq__(self, other) -> bool:
        return isinstance(other, NodeIdentity) and other.public_key == self.public_key

    def __hash__(self) -> int:
        return hash(self.public_key)

    def __repr__(self) -> str:
        return f"NodeIdentity({self.node_id[:16]}…)"


def recover_public_key(message: bytes, signature: bytes) -> Optional[bytes]:
    """从签名中恢复压缩公钥，签名无效时返回 None"""
    if len(signature) != SIGNATURE_LENGTH:
        return None
    try:
        candidates = _candidates(signature[:64], _digest(message))
    except Exception as e:
        logger.debug(f"公钥恢复失败: {e}")
        return None
    index = signature[64]
    if index >= len(candidates):
        return None
    return candidates[index].to_string("compressed")


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_LENGTH:
        return False
    try:
        verifying_key = VerifyingKey.from_string(public_key, curve=SECP256k1)
        return verifying_key.verify_digest(signature[:64], _digest(message), sigdecode=sigdecode_string)
    except Exception:
        return False
