from setuptools import setup, find_packages

setup(
    name="forensic-rl",
    version="1.0.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"app": ["data/*.csv", "data/*.json"]},
    install_requires=[
        "python-dotenv",
        "pydantic>=2",
        "numpy",
        "pandas>=1.5",
        "matplotlib",
        "httpx",
        "tenacity",
    ],
    entry_points={
        "console_scripts": [
            "forensic-rl=app.cli:main",
        ],
    },
)
