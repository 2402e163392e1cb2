"""Payload codec for the board <-> cycler CAN link.

Voltage frame (board -> cycler), 7 bytes::

    <H H H B   three Cell voltages in 0.1 mV units, little-endian, then status
               status bit 0 = balancing enabled (echo of the last command)

Command frame (cycler -> board), 1 byte: bit 0 = enable balancing.
"""

from __future__ import annotations

import struct
from typing import Sequence

VOLTAGE_FRAME = struct.Struct("<HHHB")
VOLTAGE_LSB = 1e-4


class CanCodecError(ValueError):
    pass


def encode_voltage_frame(v_cells: Sequence[float], balancing_enabled: bool) -> bytes:
    if len(v_cells) != 3:
        raise CanCodecError("voltage frame carries exactly three Cell voltages")
    counts = []
    for j, v in enumerate(v_cells):
        n = round(v / VOLTAGE_LSB)
        if not 0 <= n <= 0xFFFF:
            raise CanCodecError(f"Cell {j + 1} voltage {v} V not encodable in 0.1 mV uint16")
        counts.append(n)
    return VOLTAGE_FRAME.pack(*counts, 1 if balancing_enabled else 0)


def decode_voltage_frame(payload: bytes) -> tuple[tuple[float, float, float], bool]:
    if len(payload) != VOLTAGE_FRAME.size:
        raise CanCodecError(f"voltage frame must be {VOLTAGE_FRAME.size} bytes, got {len(payload)}")
    a, b, c, status = VOLTAGE_FRAME.unpack(payload)
    return (a * VOLTAGE_LSB, b * VOLTAGE_LSB, c * VOLTAGE_LSB), bool(status & 0x01)


def encode_command(enable_balancing: bool) -> bytes:
    return bytes([0x01 if enable_balancing else 0x00])


def decode_command(payload: bytes) -> bool:
    if len(payload) != 1:
        raise CanCodecError(f"command frame must be 1 byte, got {len(payload)}")
    return bool(payload[0] & 0x01)
