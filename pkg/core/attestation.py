#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
远程证明模块

模拟的证明服务：为飞地发出的请求签发证明报告（quote），
数据存储一侧据此确认请求来自受信任、度量值正确的飞地
"""

import hashlib
from dataclasses import dataclass
from typing import Iterable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from loguru import logger

DEFAULT_BUILD_ID = "regov-enclave-1.0"

MEASUREMENT_SIZE = 32
NODE_KEY_SIZE = 33
HASH_SIZE = 32
NONCE_SIZE = 16
SIGNATURE_SIZE = 64
QUOTE_SIZE = MEASUREMENT_SIZE + NODE_KEY_SIZE + HASH_SIZE + NONCE_SIZE + SIGNATURE_SIZE


def enclave_measurement(build_id: str = DEFAULT_BUILD_ID) -> bytes:
    """飞地构建的度量值"""
    return hashlib.sha256(b"regov-enclave:" + build_id.encode("utf-8")).digest()


def request_hash(nonce: bytes, url: str) -> bytes:
    return hashlib.sha256(nonce + url.encode("utf-8")).digest()


@dataclass(frozen=True)
class AttestationQuote:
    measurement: bytes
    node_key: bytes
    request_hash: bytes
    nonce: bytes
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return self.measurement + self.node_key + self.request_hash + self.nonce

    def to_bytes(self) -> bytes:
        return self.signed_payload() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttestationQuote":
        if len(data) != QUOTE_SIZE:
            raise ValueError(f"证明报告长度错误: {len(data)}，应为 {QUOTE_SIZE}")
        offset = 0
        fields = []
        for size in (MEASUREMENT_SIZE, NODE_KEY_SIZE, HASH_SIZE, NONCE_SIZE, SIGNATURE_SIZE):
            fields.append(data[offset:offset + size])
            offset += size
        return cls(*fields)


class QuoteVerifier:
    """数据存储一侧的证明校验器"""

    def __init__(self, authority_key: bytes, trusted_measurements: Iterable[bytes] = ()):
        self._public_key = Ed25519PublicKey.from_public_bytes(authority_key)
        self.trusted_measurements = set(trusted_measurements)

    def trust(self, measurement: bytes) -> None:
        self.trusted_measurements.add(measurement)

    def verify(self, quote: AttestationQuote, url: Optional[str] = None) -> bool:
        """
        校验证明报告

        Args:
            quote: 证明报告
            url: 请求地址；给出时同时检查报告是否绑定该地址

        Returns:
            签名有效、度量值受信任且（可选）请求摘要匹配时为 True
        """
        try:
            self._public_key.verify(quote.signature, quote.signed_payload())
        except InvalidSignature:
            logger.debug("证明报告签名无效")
            return False
        if quote.measurement not in self.trusted_measurements:
            logger.debug(f"未受信任的飞地度量值: {quote.measurement.hex()[:16]}")
            return False
        if url is not None and quote.request_hash != request_hash(quote.nonce, url):
            logger.debug("证明报告与请求地址不匹配")
            return False
        return True


class AttestationAuthority:
    """模拟的证明服务，签名密钥由种子派生以便重放"""

    def __init__(self, seed: str = "regov-attestation-authority"):
        self._private_key = Ed25519PrivateKey.from_private_bytes(
            hashlib.sha256(seed.encode("utf-8")).digest()
        )
        self.public_key = self._private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        logger.debug(f"证明服务初始化完成: {self.public_key.hex()[:16]}")

    def issue_quote(self, measurement: bytes, node_key: bytes, digest: bytes,
                    nonce: bytes) -> AttestationQuote:
        unsigned = AttestationQuote(measurement, node_key, digest, nonce)
        return AttestationQuote(measurement, node_key, digest, nonce,
                                self._private_key.sign(unsigned.signed_payload()))

    def verifier(self, *trusted_measurements: bytes) -> QuoteVerifier:
        return QuoteVerifier(self.public_key, trusted_measurements)
