import asyncio
import sys
from pathlib import Path

from sqlalchemy.ext.asyncio import async_sessionmaker, create_async_engine

from trustmas.config import Settings
from trustmas.models import Base, Scenario
from trustmas.sim import load_scenario


async def main():
    directory = Path(sys.argv[1] if len(sys.argv) > 1 else 'scenarios')
    engine = create_async_engine(Settings().db_url)
    async_session = async_sessionmaker(engine, expire_on_commit=False)

    async with engine.begin() as connection:
        await connection.run_sync(Base.metadata.drop_all)
        await connection.run_sync(Base.metadata.create_all)

    async with async_session() as session, session.begin():
        for path in sorted(directory.glob('*.json')):
            cfg = load_scenario(path.read_text())
            document = cfg.model_dump(mode='json')
            session.add(Scenario(name=cfg.name, document=document))
    await engine.dispose()


if __name__ == '__main__':
    asyncio.run(main())
