from deltaforge.fixtures.corpus import FixturePair, FixtureSpec, PlantedChange, generate_pair, write_fixture

__all__ = ["FixturePair", "FixtureSpec", "PlantedChange", "generate_pair", "write_fixture"]
