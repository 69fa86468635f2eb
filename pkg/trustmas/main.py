from contextlib import asynccontextmanager

from fastapi import FastAPI
from sqlalchemy.ext.asyncio import create_async_engine

from .dependencies import get_settings
from .models import Base
from .router import router


@asynccontextmanager
async def lifespan(app: FastAPI):
    engine = create_async_engine(get_settings().db_url)
    async with engine.begin() as connection:
        await connection.run_sync(Base.metadata.create_all)
    await engine.dispose()
    yield


app = FastAPI(lifespan=lifespan)
app.include_router(router)
