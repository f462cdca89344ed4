import json

import pytest

from deltaforge.phase1.section_store import SectionStore
from deltaforge.phase1.sectionizer import sectionize
from deltaforge.phase2.agent.gateway import BackendSpec, MockChat
from deltaforge.phase3.sysml.parser import parse

V1_TEXT = """Radio Link Requirements
1 Scope
The radio link shall connect the ground station and the aircraft.
2 Power
2.1 Transmit Power
The transmitter shall stay within 5% of the nominal power.
2.2 Battery
The battery shall last at least 10 hours.
3 Alarms
The operator shall acknowledge every alarm.
"""

V2_TEXT = """Radio Link Requirements
1 Scope
The radio link shall connect the ground station and the aircraft.
2 Power
2.1 Transmit Power
The transmitter shall stay within 2% of the nominal power.
2.2 Battery
The battery may last at least 10 hours.
3 Alarms
The operator shall acknowledge every alarm.
4 Logging
Every alarm shall be logged with a timestamp.
"""


@pytest.fixture(autouse=True)
def _fresh_mock_cache():
    MockChat.clear_cache()
    yield
    MockChat.clear_cache()


@pytest.fixture(autouse=True)
def _log_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("DELTAFORGE_LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def store(tmp_path):
    return SectionStore.open(tmp_path / "store")


@pytest.fixture
def loaded_store(store):
    store.put_sections("v1", sectionize(V1_TEXT, version="v1"))
    store.put_sections("v2", sectionize(V2_TEXT, version="v2"))
    return store


@pytest.fixture
def mock_backend(tmp_path):
    """Factory: writes a fixture JSON and returns a mock BackendSpec over it."""
    counter = {"n": 0}

    def make(entries, backend_id=None, supports_seed=True):
        counter["n"] += 1
        backend_id = backend_id or f"mock{counter['n']}"
        path = tmp_path / "mocks" / f"{backend_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(entries), encoding="utf-8")
        return BackendSpec(id=backend_id, kind="mock", fixture_path=str(path), supports_seed=supports_seed)

    return make


WEATHER_MODEL = """package Weather {
    port def WeatherIn {
        attribute windSpeed : Real;
    }
    part def Sensor {
        port data : WeatherIn;
        attribute windSpeed : Real;
        attribute mode : String;
    }
    part def Station {
        part sensor : Sensor;
        port feed : WeatherIn;
        connect sensor.data to feed;
    }
    require def WindLimit {
        doc "Operate only in moderate wind.";
        constraint windSpeed <= 60;
    }
    part station : Station;
    satisfy WindLimit by station;
}
"""

WIND_SPEED = "station.sensor.windSpeed"
MODE = "station.sensor.mode"


@pytest.fixture
def weather_model():
    return parse(WEATHER_MODEL)
