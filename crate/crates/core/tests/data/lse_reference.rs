// 100 draws from U[-50, 50]; HP_LSE computed with 256-bit mpmath.
pub const HP_VALUES: [f64; 100] = [
    10.783500834519323,
    27.090870840538344,
    -24.11510139049652,
    -35.01597839177965,
    21.824336616094655,
    36.50037822783405,
    -16.53433589850333,
    -26.839834674443196,
    17.799914854962523,
    40.12791409663514,
    -37.57366175615664,
    -45.00628083419224,
    -14.187352546398216,
    -20.05539038563475,
    10.173245582120671,
    -31.83233207108507,
    -46.89819946663707,
    -17.329486457015776,
    -26.508711800087514,
    -19.89012299108429,
    -8.492678850441457,
    -28.989166901826025,
    47.375999735511016,
    12.180511418745766,
    23.017682629504975,
    -12.559661706847834,
    43.551024771810916,
    33.97651239642157,
    -25.341681498403666,
    21.08513717037974,
    44.507528653064384,
    7.142218394924285,
    -12.96302431906804,
    -12.29235363865677,
    33.39506925487473,
    3.4217463069268987,
    43.51490395415054,
    18.650493811717112,
    31.821086902025655,
    16.581005492604547,
    -12.385629840018368,
    -17.101062969695512,
    45.90668300775539,
    19.88407933623381,
    -9.379124372196948,
    -40.46708519349579,
    -8.491628680425364,
    21.702351004875595,
    -16.88420341203374,
    37.89529730361171,
    -38.3509169782628,
    10.33034338035064,
    18.400233235545386,
    -43.77201810655331,
    16.057292346987936,
    16.99898711638862,
    21.374695580854933,
    22.643998507909657,
    20.226624763345058,
    47.512983919260435,
    41.229775556082444,
    -16.556558134423838,
    4.1995421181550086,
    45.00984269189537,
    -25.167956323865326,
    -14.06123759427065,
    27.188079451899995,
    22.623085099262624,
    -7.4069047735350395,
    -45.442073381506454,
    26.667250056568818,
    41.57847905627159,
    39.0888989531194,
    24.30570516947266,
    37.0838365142732,
    27.104245711203305,
    -23.725626610315377,
    12.435173789576162,
    -4.617473285438088,
    12.19375652360165,
    11.865453522703007,
    -41.33678805941291,
    35.879621616576586,
    -18.56337089226998,
    -6.109827408702614,
    -12.408316099303697,
    -42.198589975145715,
    -27.812397362258302,
    -0.6903030732469091,
    48.240340958740475,
    19.166297027251915,
    -31.435889613450552,
    -21.495142860273564,
    -44.221070601092585,
    38.33057420243004,
    5.50636120121866,
    46.33318778380067,
    -44.86321232798339,
    -5.464656055457205,
    25.742735567841166,
];
pub const HP_LSE: f64 = 49.044213361058475;
