import json

import numpy as np
import pytest

from vomap.geometry import GridSpec, Link, ObstacleMap
from vomap.io import (CSV_HEADER, MAP_SCHEMA, FormatError, format_measurements, read_map,
                      read_measurements, read_model, read_radio_map, sha256_file, write_manifest,
                      write_map, write_measurements, write_model, write_radio_map)
from vomap.propagation import Measurement, PathLossParams, RadioMapModel, generate_measurements
from vomap.stn import POOLED_FEATURE_NAMES, ScatterRegressor


class TestMapFiles:
    def test_round_trip_bytes(self, tmp_path, scene16):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        write_map(a, scene16)
        H = read_map(a)
        np.testing.assert_array_equal(H.heights, scene16.heights)
        assert H.grid == scene16.grid
        write_map(b, H)
        assert a.read_bytes() == b.read_bytes()

    def test_awkward_floats(self, tmp_path):
        g = GridSpec(2, 3, 0.1, origin=(-1e-7, 12345.678))
        vals = np.array([[0.1 + 0.2, 1e-300, 5e15], [np.nextafter(1.0, 2.0), 0.0, 1 / 3]])
        write_map(tmp_path / "m.txt", ObstacleMap(g, vals))
        H = read_map(tmp_path / "m.txt")
        np.testing.assert_array_equal(H.heights, vals)
        assert H.grid == g

    def test_lf_and_header(self, tmp_path, scene16):
        write_map(tmp_path / "m.txt", scene16)
        raw = (tmp_path / "m.txt").read_bytes()
        assert b"\r" not in raw
        head = json.loads(raw.split(b"\n")[0])
        assert head == {"schema": MAP_SCHEMA, "M1": 16, "M2": 16, "cell_size": 10.0, "origin": [0.0, 0.0]}

    def test_bad_number_position(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text(json.dumps({"schema": MAP_SCHEMA, "M1": 2, "M2": 2, "cell_size": 1.0,
                                 "origin": [0, 0]}) + "\n1.0 2.0\n3.0 x4\n")
        with pytest.raises(FormatError) as exc:
            read_map(p)
        assert (exc.value.line, exc.value.column) == (3, 5)

    def test_wrong_schema(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text(json.dumps({"schema": "vomap.obstacle-map/9", "M1": 1, "M2": 1,
                                 "cell_size": 1.0, "origin": [0, 0]}) + "\n0\n")
        with pytest.raises(FormatError, match="schema"):
            read_map(p)

    def test_bad_header_json(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text('{"schema": \n')
        with pytest.raises(FormatError) as exc:
            read_map(p)
        assert exc.value.line == 1 and exc.value.column is not None

    def test_row_count(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text(json.dumps({"schema": MAP_SCHEMA, "M1": 3, "M2": 1, "cell_size": 1.0,
                                 "origin": [0, 0]}) + "\n0\n0\n")
        with pytest.raises(FormatError, match="rows"):
            read_map(p)

    def test_crlf_rejected(self, tmp_path, scene16):
        write_map(tmp_path / "m.txt", scene16)
        p = tmp_path / "c.txt"
        p.write_bytes((tmp_path / "m.txt").read_bytes().replace(b"\n", b"\r\n"))
        with pytest.raises(FormatError, match="LF"):
            read_map(p)

    def test_negative_height_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text(json.dumps({"schema": MAP_SCHEMA, "M1": 1, "M2": 2, "cell_size": 1.0,
                                 "origin": [0, 0]}) + "\n0 -1\n")
        with pytest.raises(FormatError):
            read_map(p)


class TestRadioMap:
    def test_round_trip_with_nan(self, tmp_path, grid16, rng):
        vals = rng.random(grid16.shape) * 100
        vals[3, 4] = np.nan
        meta = {"quantity": "attenuation_db", "tx": [1.0, 2.0, 3.0]}
        write_radio_map(tmp_path / "r.txt", grid16, vals, meta)
        g, v, m = read_radio_map(tmp_path / "r.txt")
        assert g == grid16 and m == meta
        np.testing.assert_array_equal(v, vals)
        write_radio_map(tmp_path / "s.txt", g, v, m)
        assert (tmp_path / "r.txt").read_bytes() == (tmp_path / "s.txt").read_bytes()

    def test_map_reader_rejects_radio_map(self, tmp_path, grid16):
        write_radio_map(tmp_path / "r.txt", grid16, np.zeros(grid16.shape), {})
        with pytest.raises(FormatError, match="schema"):
            read_map(tmp_path / "r.txt")


class TestMeasurements:
    def test_round_trip_bytes(self, tmp_path, scene16):
        data = generate_measurements(scene16, PathLossParams(30, 22), n=40, seed=1)
        write_measurements(tmp_path / "a.csv", data)
        back = read_measurements(tmp_path / "a.csv")
        assert [m.y for m in back] == [m.y for m in data]
        np.testing.assert_array_equal([m.link.as_array() for m in back], [m.link.as_array() for m in data])
        write_measurements(tmp_path / "b.csv", back)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_header(self):
        text = format_measurements([Measurement(Link([0, 0, 50], [10, 0, 1.5]), 70.25)])
        assert text == CSV_HEADER + "\n0.0,0.0,50.0,10.0,0.0,1.5,70.25\n"

    def test_bad_field_position(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(CSV_HEADER + "\n0,0,50,10,0,1.5,70\n0,0,50,1O,0,1.5,70\n")
        with pytest.raises(FormatError) as exc:
            read_measurements(p)
        assert (exc.value.line, exc.value.column) == (3, 8)

    def test_field_count(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(CSV_HEADER + "\n0,0,50,10,0,1.5\n")
        with pytest.raises(FormatError) as exc:
            read_measurements(p)
        assert exc.value.line == 2

    def test_wrong_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,c\n")
        with pytest.raises(FormatError):
            read_measurements(p)

    def test_invalid_link(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(CSV_HEADER + "\n0,0,50,0,0,1.5,70\n")
        with pytest.raises(FormatError) as exc:
            read_measurements(p)
        assert exc.value.line == 2


class TestModelFiles:
    def model(self, H):
        w = np.linspace(-1, 1, len(POOLED_FEATURE_NAMES))
        return RadioMapModel(H, PathLossParams(31.5, 21.25), scatter=ScatterRegressor("linear", w, (8, 8)),
                             eccentricity=0.7)

    def test_round_trip(self, tmp_path, scene16):
        m = self.model(scene16)
        write_model(tmp_path / "m.json", m, tmp_path / "m.map.txt", {"loss": 1.5})
        back = read_model(tmp_path / "m.json")
        assert back.los == m.los and back.eccentricity == 0.7
        np.testing.assert_array_equal(back.H.heights, scene16.heights)
        np.testing.assert_array_equal(back.scatter.weights, m.scatter.weights)
        assert back.scatter.feature_shape == (8, 8)
        write_model(tmp_path / "n.json", back, tmp_path / "n.map.txt", {"loss": 1.5})
        a = json.loads((tmp_path / "m.json").read_text())
        b = json.loads((tmp_path / "n.json").read_text())
        assert a["obstacle_map"]["sha256"] == b["obstacle_map"]["sha256"]
        a.pop("obstacle_map"), b.pop("obstacle_map")
        assert a == b

    def test_hash_checked(self, tmp_path, scene16):
        write_model(tmp_path / "m.json", self.model(scene16), tmp_path / "m.map.txt")
        write_map(tmp_path / "m.map.txt", ObstacleMap.flat(scene16.grid))
        with pytest.raises(FormatError, match="hash"):
            read_model(tmp_path / "m.json")

    def test_records_optimizer_and_nmae(self, tmp_path, scene16):
        write_model(tmp_path / "m.json", self.model(scene16), tmp_path / "m.map.txt",
                    {"optimizer": "scaled-clipped-gd"})
        d = json.loads((tmp_path / "m.json").read_text())
        assert d["training"]["optimizer"] == "scaled-clipped-gd"
        assert "nmae_definition" in d and d["scatter"]["features_version"] == 1

    def test_bad_json(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"schema": "vomap.model/1",\n  "x": }\n')
        with pytest.raises(FormatError) as exc:
            read_model(p)
        assert exc.value.line == 2

    def test_schema_mismatch(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"schema": "vomap.model/0"}\n')
        with pytest.raises(FormatError, match="schema"):
            read_model(p)


class TestManifest:
    def test_contents(self, tmp_path, scene16):
        out = tmp_path / "m.txt"
        write_map(out, scene16)
        mp = write_manifest(out, "gen-scene", {"argv": ["gen-scene"]}, 7, [], [out])
        d = json.loads(mp.read_text())
        assert d["seed"] == 7 and d["command"] == "gen-scene"
        assert d["outputs"] == {"m.txt": sha256_file(out)}
        assert set(d["versions"]) >= {"vomap", "numpy", "scipy", "python"}
        assert len(d["config_sha256"]) == 64
