#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
密封存储模块

飞地的落盘格式：每个节点一个二进制文件，版本化文件头后跟长度前缀的密封记录。
记录用 AES-GCM 加密，记录类型和资源编号作为附加认证数据
"""

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from loguru import logger

from core.errors import SealingError

MAGIC = b"RGSEAL"
VERSION = 1
HEADER = MAGIC + bytes([VERSION])

KIND_OBJECT = "O"
KIND_LOG = "L"
RECORD_KINDS = (KIND_OBJECT, KIND_LOG)

NONCE_SIZE = 12
_LENGTH = struct.Struct(">I")
_RECORD_HEAD = struct.Struct(">cQ")

RecordKey = Tuple[str, int]


@dataclass(frozen=True)
class SealedObject:
    kind: str
    resource_id: int
    nonce: bytes
    ciphertext: bytes

    def associated_data(self) -> bytes:
        return _RECORD_HEAD.pack(self.kind.encode("ascii"), self.resource_id)

    def to_bytes(self) -> bytes:
        body = self.associated_data() + self.nonce + self.ciphertext
        return _LENGTH.pack(len(body)) + body


class SealedStore:
    """密封文件的读写；密钥只存在于内存中"""

    def __init__(self, path: str, key: Optional[bytes] = None):
        self.path = path
        self._aead = AESGCM(key or AESGCM.generate_key(bit_length=256))

    def rekey(self) -> None:
        """换用新的随机密钥并重新密封现有记录"""
        records = self.load()
        self._aead = AESGCM(AESGCM.generate_key(bit_length=256))
        self.save(records)
        logger.info(f"密封存储已更换密钥: {len(records)} 条记录重新密封")

    def seal(self, kind: str, resource_id: int, plaintext: bytes) -> SealedObject:
        if kind not in RECORD_KINDS:
            raise ValueError(f"未知记录类型: {kind}")
        nonce = os.urandom(NONCE_SIZE)
        head = SealedObject(kind, resource_id, nonce, b"")
        return SealedObject(kind, resource_id, nonce,
                            self._aead.encrypt(nonce, plaintext, head.associated_data()))

    def unseal(self, sealed: SealedObject) -> bytes:
        try:
            return self._aead.decrypt(sealed.nonce, sealed.ciphertext, sealed.associated_data())
        except InvalidTag as e:
            raise SealingError(f"密封记录完整性校验失败: {sealed.kind}{sealed.resource_id}") from e

    # ------------------------------------------------------------ 文件

    def exists(self) -> bool:
        return os.path.exists(self.path)

    def read_sealed(self) -> Dict[RecordKey, SealedObject]:
        """读取并解析文件，不解密"""
        if not self.exists():
            return {}
        with open(self.path, "rb") as f:
            data = f.read()

        if not data.startswith(MAGIC):
            raise SealingError(f"密封文件头无效: {self.path}")
        if len(data) <= len(MAGIC) or data[len(MAGIC)] != VERSION:
            raise SealingError(f"不支持的密封文件版本: {self.path}")

        records: Dict[RecordKey, SealedObject] = {}
        offset = len(HEADER)
        while offset < len(data):
            if offset + _LENGTH.size > len(data):
                raise SealingError(f"密封记录被截断 (偏移 {offset})")
            (length,) = _LENGTH.unpack_from(data, offset)
            offset += _LENGTH.size
            body = data[offset:offset + length]
            if len(body) != length or length < _RECORD_HEAD.size + NONCE_SIZE:
                raise SealingError(f"密封记录长度无效 (偏移 {offset})")
            offset += length

            kind_byte, resource_id = _RECORD_HEAD.unpack_from(body, 0)
            kind = kind_byte.decode("ascii", errors="replace")
            if kind not in RECORD_KINDS:
                raise SealingError(f"未知的密封记录类型: {kind_byte!r}")
            nonce = body[_RECORD_HEAD.size:_RECORD_HEAD.size + NONCE_SIZE]
            ciphertext = body[_RECORD_HEAD.size + NONCE_SIZE:]
            if (kind, resource_id) in records:
                raise SealingError(f"重复的密封记录: {kind}{resource_id}")
            records[(kind, resource_id)] = SealedObject(kind, resource_id, nonce, ciphertext)
        return records

    def load(self) -> Dict[RecordKey, bytes]:
        """读取并解密全部记录；任何一条损坏都视为整个存储损坏"""
        return {key: self.unseal(sealed) for key, sealed in self.read_sealed().items()}

    def save(self, records: Dict[RecordKey, bytes]) -> None:
        """重新密封全部记录并原子替换文件"""
        directory = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(directory, exist_ok=True)

        chunks = [HEADER]
        for kind, resource_id in sorted(records):
            chunks.append(self.seal(kind, resource_id, records[(kind, resource_id)]).to_bytes())

        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".sealed-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(b"".join(chunks))
            os.replace(tmp_path, self.path)
        except Exception:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        logger.debug(f"密封存储已写入: {self.path} ({len(records)} 条记录)")
