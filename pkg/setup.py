from setuptools import setup, find_packages

setup(
    name="besov_interp",
    version="0.1.0",
    description="K-functionals and real interpolation norms for discrete Besov sequence spaces",
    author="Besov Interp Team",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    install_requires=[
        "numpy>=1.19.0",
        "scipy>=1.6.0",
    ],
    python_requires=">=3.7",
    entry_points={
        "console_scripts": [
            "besov-interp=besov_interp.cli:main",
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
