import pathlib

from setuptools import find_packages, setup

here = pathlib.Path(__file__).parent

with (here / "README.rst").open("r", encoding="utf-8") as fo:
    long_description = fo.read()

metadatas = dict(
    name="pedintent",
    description="Pedestrian crossing intention from scene graphs",
    long_description=long_description,
    long_description_content_type="text/x-rst",
    author="Dalibo",
    author_email="contact@dalibo.com",
    license="PostgreSQL",
    keywords="pedestrian intention graph convolution trajectory traffic light",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: PostgreSQL License",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    use_scm_version=True,
    setup_requires=["setuptools_scm"],
)


if __name__ == "__main__":
    setup(
        packages=find_packages(".", exclude=["tests", "tests.*"]),
        package_data={"pedintent": ["py.typed"]},
        install_requires=["numpy>=1.22"],
        entry_points={"console_scripts": ["pedintent = pedintent.cli:main"]},
        python_requires=">=3.9",
        **metadatas
    )
