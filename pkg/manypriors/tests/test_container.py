import struct

import numpy as np
from django.test import SimpleTestCase

from manypriors.exceptions import (
    BadMagicError,
    FormatError,
    ModelMismatchError,
    TruncatedStreamError,
    UnsupportedVersionError,
    UsageError,
)
from manypriors.services.container import HEADER_SIZE, STREAM_MAGIC, StreamHeader, read_stream, write_stream
from manypriors.services.probability_model import MonotoneCdfParams, SymbolAlphabet, freeze
from manypriors.services.transform import PlanePolicy


class StreamHeaderTests(SimpleTestCase):
    def setUp(self):
        self.tables = freeze(MonotoneCdfParams.initialize(3, 4, SymbolAlphabet(-5, 7), seed=1))
        self.header = StreamHeader.for_model(135, 241, PlanePolicy.PLANES, 0.25, self.tables)
        self.stream = write_stream(self.header, b"\x01\x02\x03", b"payload")

    def test_header_is_sixty_four_bytes(self):
        self.assertEqual(HEADER_SIZE, 64)
        self.assertEqual(len(self.header.pack()), 64)
        self.assertTrue(self.stream.startswith(STREAM_MAGIC))

    def test_round_trip(self):
        header, index_bytes, payload = read_stream(self.stream)
        self.assertEqual(header, self.header)
        self.assertEqual((index_bytes, payload), (b"\x01\x02\x03", b"payload"))
        self.assertEqual(header.alphabet, SymbolAlphabet(-5, 7))
        header.check_model(self.tables)

    def test_newer_version_is_refused(self):
        data = bytearray(self.stream)
        struct.pack_into("<H", data, len(STREAM_MAGIC), 2)
        with self.assertRaises(UnsupportedVersionError):
            read_stream(bytes(data))

    def test_foreign_data_is_refused(self):
        with self.assertRaises(BadMagicError):
            read_stream(b"P5\n1 1\n255\n\x00" + bytes(64))
        with self.assertRaises(BadMagicError):
            read_stream(b"AB")

    def test_every_truncation_is_detected(self):
        for cut in range(len(self.stream)):
            with self.assertRaises(TruncatedStreamError):
                read_stream(self.stream[:cut])

    def test_other_tables_are_refused(self):
        other = freeze(MonotoneCdfParams.initialize(3, 4, SymbolAlphabet(-5, 7), seed=2))
        with self.assertRaises(ModelMismatchError):
            self.header.check_model(other)

    def test_coding_parameters_are_bound_to_the_model(self):
        # delta at byte 16, planes at 15, height at 7
        for offset, fmt, value in ((16, "<f", 0.5), (15, "<B", 0), (7, "<I", 134)):
            data = bytearray(self.stream)
            struct.pack_into(fmt, data, offset, value)
            header, _, _ = read_stream(bytes(data))
            with self.assertRaises(ModelMismatchError):
                header.check_model(self.tables)

    def test_invalid_fields(self):
        bad_delta = StreamHeader(16, 16, PlanePolicy.LUMA, 0.0, 4, 3, -5, 7, bytes(32))
        with self.assertRaises(FormatError):
            read_stream(write_stream(bad_delta, b"", b""))
        bad_alphabet = StreamHeader(16, 16, PlanePolicy.LUMA, 0.1, 4, 3, 2, 7, bytes(32))
        with self.assertRaises(FormatError):
            read_stream(write_stream(bad_alphabet, b"", b""))
        with self.assertRaises(UsageError):
            StreamHeader(-1, 16, PlanePolicy.LUMA, 0.1, 4, 3, -5, 7, bytes(32)).pack()

    def test_empty_image_header(self):
        header = StreamHeader.for_model(0, 0, PlanePolicy.LUMA, 0.1, self.tables)
        restored, index_bytes, payload = read_stream(write_stream(header, b"", b""))
        self.assertEqual((restored.height, restored.width), (0, 0))
        self.assertEqual((index_bytes, payload), (b"", b""))
        self.assertAlmostEqual(restored.delta, float(np.float32(0.1)))
