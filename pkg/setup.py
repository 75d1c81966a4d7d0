""" Setup module for the stress-basis package """
from setuptools import setup
from stress_basis import __version__ as version

REQUIREMENTS = [
    "numpy~=1.24",
    "scipy~=1.10",
    "jsonschema~=4.17",
]
DEV_REQUIREMENTS = {
    "dev": [
        "pytest==7.2.*",
        "pylint==2.16.*",
        "black==23.1.*",
        "mock==4.0.3",
        "hypothesis~=6.70",
    ]
}

with open("README.md", encoding="utf-8") as readme_file:
    LONG_DESCRIPTION = "".join(readme_file.readlines())

setup(
    name="stress-basis",
    version=version,
    license="MIT",
    description="Planar elastic stress solver built on residual-stress eigenbases",
    long_description=LONG_DESCRIPTION,
    long_description_content_type="text/markdown",
    keywords=["elasticity", "stress", "eigenbasis", "variational", "cli"],
    packages=["stress_basis"],
    package_data={"stress_basis": ["schema/*.json"]},
    include_package_data=True,
    install_requires=REQUIREMENTS,
    extras_require=DEV_REQUIREMENTS,
    python_requires=">=3.8",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Physics",
        "Operating System :: OS Independent",
    ],
    entry_points={
        "console_scripts": ["stress-basis=stress_basis.__main__:run"],
    },
)
